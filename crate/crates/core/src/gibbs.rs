//! Conjugate Gibbs sampler for the FH model.
//!
//! Full conditionals with `B_i = τ_u² / (τ_u² + v_i)`:
//! ```text
//! θ_i | rest  ~ N(B_i y_i + (1 - B_i) x_i'β, B_i v_i)
//! β   | rest  ~ N(P⁻¹ X'θ / τ_u², P⁻¹),   P = X'X / τ_u² + prior precision
//! τ_u²| rest  ~ IG(α + N/2, b + Σ (θ_i - x_i'β)² / 2)
//! ```
//! A flat prior on τ_u² is handled as `IG(-1, 0)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{DrawMatrix, EstimatorKind, PosteriorFit};
use crate::model::{canonical_len, CoefPrior, Dataset, HyperPriorSpec, ScalePrior};
use crate::parallel::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    pub n_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Replace a half-normal τ_u² prior with `IG(shape, scale)` instead of
    /// failing; the substitution is recorded in the fit notes.
    pub conjugate_substitute: Option<(f64, f64)>,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            n_iters: 6000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
            conjugate_substitute: None,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iters || self.thin == 0 {
            return Err(Error::Argument(format!(
                "gibbs requires burn_in < n_iters and thin >= 1 (got {} / {} / {})",
                self.burn_in, self.n_iters, self.thin
            )));
        }
        if (self.n_iters - self.burn_in) / self.thin < 2 {
            return Err(Error::Argument("gibbs must keep at least two draws".into()));
        }
        Ok(())
    }
}

enum TauPrior {
    InvGamma(f64, f64),
    Fixed(f64),
}

enum BetaPrior {
    Normal(f64, f64),
    Flat,
    Fixed(Vec<f64>),
}

fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0)
        .map_err(|e| Error::Domain(format!("inverse gamma shape {shape}: {e}")))?
        .sample(rng);
    Ok(scale / g)
}

/// Runs the FH Gibbs sampler and returns summaries over the kept draws.
pub fn gibbs_fit_fh(data: &Dataset, hyper: &HyperPriorSpec, config: &GibbsConfig) -> Result<PosteriorFit> {
    config.validate()?;
    let mut notes = Vec::new();
    let tau_prior = match &hyper.tau_u2 {
        ScalePrior::InverseGamma { shape, scale } => TauPrior::InvGamma(*shape, *scale),
        ScalePrior::Flat => TauPrior::InvGamma(-1.0, 0.0),
        ScalePrior::Fixed { value } => TauPrior::Fixed(*value),
        other => match config.conjugate_substitute {
            Some((shape, scale)) if matches!(other, ScalePrior::HalfNormalOnSd { .. }) => {
                notes.push(format!(
                    "tau_u2 prior {other:?} replaced by inverse_gamma(shape={shape}, scale={scale})"
                ));
                TauPrior::InvGamma(shape, scale)
            }
            _ => {
                return Err(Error::Unsupported(format!(
                    "gibbs oracle needs a conjugate tau_u2 prior, got {other:?}"
                )))
            }
        },
    };
    let beta_prior = match &hyper.beta {
        CoefPrior::Normal { mean, sd } => BetaPrior::Normal(*mean, *sd),
        CoefPrior::Flat => BetaPrior::Flat,
        CoefPrior::Fixed { values } => {
            if values.len() != data.px() {
                return Err(Error::dim("beta fixed values", data.px(), values.len()));
            }
            BetaPrior::Fixed(values.clone())
        }
    };

    let n = data.len();
    let px = data.px();
    let obs = data.observations();
    let y: Vec<f64> = obs.iter().map(|o| o.y).collect();
    let v: Vec<f64> = obs.iter().map(|o| o.v).collect();
    if let Some(bad) = obs.iter().find(|o| !(o.v > 0.0)) {
        return Err(Error::Domain(format!("domain {}: v must be positive", bad.domain_id)));
    }
    let x = DMatrix::from_fn(n, px, |i, p| obs[i].x[p]);
    let xtx = x.transpose() * &x;

    let mut rng = rng_from_seed(config.seed);
    let mut beta: Vec<f64> = match &beta_prior {
        BetaPrior::Fixed(b) => b.clone(),
        _ => vec![0.0; px],
    };
    let mut tau2 = match tau_prior {
        TauPrior::Fixed(t) => t,
        TauPrior::InvGamma(..) => {
            let var_y = {
                let m = y.iter().sum::<f64>() / n as f64;
                y.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n as f64
            };
            (var_y - v.iter().sum::<f64>() / n as f64).max(0.1)
        }
    };
    let mut theta = y.clone();
    let mut mean = vec![0.0; n];

    let cols = canonical_len(crate::model::ModelKind::Fh, n, px, 0);
    let mut draws = DrawMatrix::new(cols);
    let mut row = vec![0.0; cols];

    for it in 0..config.n_iters {
        for i in 0..n {
            mean[i] = obs[i].x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        }
        for i in 0..n {
            let b = tau2 / (tau2 + v[i]);
            let z: f64 = StandardNormal.sample(&mut rng);
            theta[i] = b * y[i] + (1.0 - b) * mean[i] + (b * v[i]).sqrt() * z;
        }

        if !matches!(beta_prior, BetaPrior::Fixed(_)) && px > 0 {
            let mut precision = &xtx / tau2;
            let theta_v = DVector::from_column_slice(&theta);
            let mut rhs = x.transpose() * theta_v / tau2;
            if let BetaPrior::Normal(m0, sd) = beta_prior {
                for p in 0..px {
                    precision[(p, p)] += 1.0 / (sd * sd);
                    rhs[p] += m0 / (sd * sd);
                }
            }
            let chol = precision
                .cholesky()
                .ok_or_else(|| Error::Domain("beta conditional precision is not positive definite".into()))?;
            let post_mean = chol.solve(&rhs);
            // L L' = P, so β = m + L'^{-1} z has covariance P^{-1}
            let z = DVector::from_fn(px, |_, _| StandardNormal.sample(&mut rng));
            let offset = chol
                .l()
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or_else(|| Error::Domain("singular beta conditional".into()))?;
            for p in 0..px {
                beta[p] = post_mean[p] + offset[p];
            }
            for i in 0..n {
                mean[i] = obs[i].x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            }
        }

        if let TauPrior::InvGamma(shape, scale) = tau_prior {
            let ss: f64 = theta.iter().zip(&mean).map(|(t, m)| (t - m).powi(2)).sum();
            tau2 = sample_inv_gamma(shape + n as f64 / 2.0, scale + ss / 2.0, &mut rng)?;
        }

        if it >= config.burn_in && (it - config.burn_in) % config.thin == 0 {
            row[..n].copy_from_slice(&theta);
            row[n..n + px].copy_from_slice(&beta);
            row[n + px] = tau2;
            draws.push_row(&row);
        }
    }

    let mut fit = PosteriorFit::from_draws(crate::model::ModelKind::Fh, n, px, 0, EstimatorKind::Gibbs, draws)?;
    fit.iterations = config.n_iters;
    fit.notes = notes;
    Ok(fit)
}
