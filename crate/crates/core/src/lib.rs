//! Mean-field variational inference for Fay-Herriot-family small-area models,
//! with parametric-bootstrap calibration of posterior means, variances and
//! intervals, and a Monte Carlo coverage harness.

pub mod artifact;
pub mod calibration;
pub mod density;
pub mod error;
pub mod estimator;
pub mod fit;
pub mod gibbs;
pub mod harness;
pub mod model;
pub mod parallel;
pub mod quantile;
pub mod target;
pub mod transform;
pub mod vb;

pub use error::{Error, Result};
pub use estimator::{Estimator, EstimatorConfig};
pub use fit::{DrawMatrix, EstimatorKind, ParamSummary, PosteriorFit, VariationalParams};
pub use gibbs::{gibbs_fit_fh, GibbsConfig};
pub use model::{
    CoefPrior, Dataset, DomainObservation, FhParams, FhTruthConfig, FhvParams, FhvTruthConfig,
    HyperPriorSpec, ModelKind, ModelSpec, ParamVector, ScalePrior,
};
pub use vb::AdviConfig;
