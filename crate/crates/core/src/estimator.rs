//! Common interface over the variational estimator and the Gibbs oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::PosteriorFit;
use crate::gibbs::{gibbs_fit_fh, GibbsConfig};
use crate::model::{Dataset, ModelKind, ModelSpec};
use crate::vb::{fit as vb_fit, AdviConfig};

/// Anything that turns a dataset into a posterior fit.
pub trait Estimator: Sync {
    /// Fits `data`; `seed` replaces whatever seed the configuration carries.
    fn estimate(&self, spec: &ModelSpec, data: &Dataset, seed: u64) -> Result<PosteriorFit>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorConfig {
    Vb(AdviConfig),
    Gibbs(GibbsConfig),
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::Vb(AdviConfig::default())
    }
}

impl EstimatorConfig {
    pub fn seed(&self) -> u64 {
        match self {
            EstimatorConfig::Vb(c) => c.seed,
            EstimatorConfig::Gibbs(c) => c.seed,
        }
    }
}

impl Estimator for EstimatorConfig {
    fn estimate(&self, spec: &ModelSpec, data: &Dataset, seed: u64) -> Result<PosteriorFit> {
        match self {
            EstimatorConfig::Vb(c) => {
                let cfg = AdviConfig { seed, ..c.clone() };
                vb_fit(spec, data, &cfg)
            }
            EstimatorConfig::Gibbs(c) => {
                if spec.kind != ModelKind::Fh {
                    return Err(Error::Unsupported("the gibbs oracle covers the FH model only".into()));
                }
                let cfg = GibbsConfig { seed, ..c.clone() };
                gibbs_fit_fh(data, &spec.hyper, &cfg)
            }
        }
    }
}

impl<E: Estimator + ?Sized> Estimator for &E {
    fn estimate(&self, spec: &ModelSpec, data: &Dataset, seed: u64) -> Result<PosteriorFit> {
        (**self).estimate(spec, data, seed)
    }
}
