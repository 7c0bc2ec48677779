//! Estimator-agnostic posterior fit: stored draws plus summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{canonical_len, canonical_names, ModelKind, ParamVector};

/// Row-major draws on the canonical constrained layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawMatrix {
    n_cols: usize,
    data: Vec<f64>,
}

impl DrawMatrix {
    pub fn new(n_cols: usize) -> Self {
        DrawMatrix {
            n_cols,
            data: Vec::new(),
        }
    }

    pub fn from_rows(n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if n_cols == 0 || data.len() % n_cols != 0 {
            return Err(Error::dim("draw matrix data", n_cols, data.len()));
        }
        Ok(DrawMatrix { n_cols, data })
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.n_cols);
        self.data.extend_from_slice(row);
    }

    pub fn n_rows(&self) -> usize {
        if self.n_cols == 0 {
            0
        } else {
            self.data.len() / self.n_cols
        }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.n_cols).copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Mean and variance of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub var: f64,
}

/// Mean-field Gaussian on the unconstrained space; `omega` holds log sds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub omega: Vec<f64>,
}

impl VariationalParams {
    pub fn new(dim: usize, init_mean: f64, init_log_sd: f64) -> Self {
        VariationalParams {
            mu: vec![init_mean; dim],
            omega: vec![init_log_sd; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Vb,
    Gibbs,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Vb => "vb",
            EstimatorKind::Gibbs => "gibbs",
        })
    }
}

/// Output of either estimator. Summaries are always the sample mean and
/// variance (divisor `n - 1`) of the stored draw columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorFit {
    pub kind: ModelKind,
    pub n_domains: usize,
    pub px: usize,
    pub pz: usize,
    pub estimator: EstimatorKind,
    pub variational: Option<VariationalParams>,
    pub draws: DrawMatrix,
    pub summaries: Vec<ParamSummary>,
    /// Per-iteration ELBO estimates from the gradient samples.
    #[serde(with = "nullable_floats")]
    pub elbo_trace: Vec<f64>,
    /// Common-random-number ELBO evaluations used by the stop rule.
    #[serde(with = "nullable_floats")]
    pub elbo_checkpoints: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub notes: Vec<String>,
}

impl PosteriorFit {
    /// Builds a fit from draws, computing summaries.
    #[allow(clippy::too_many_arguments)]
    pub fn from_draws(
        kind: ModelKind,
        n_domains: usize,
        px: usize,
        pz: usize,
        estimator: EstimatorKind,
        draws: DrawMatrix,
    ) -> Result<Self> {
        let expected = canonical_len(kind, n_domains, px, pz);
        if draws.n_cols() != expected {
            return Err(Error::dim("draw columns", expected, draws.n_cols()));
        }
        if draws.n_rows() < 2 {
            return Err(Error::Argument("at least two posterior draws are required".into()));
        }
        let summaries = summarize(&draws, &canonical_names(kind, n_domains, px, pz));
        Ok(PosteriorFit {
            kind,
            n_domains,
            px,
            pz,
            estimator,
            variational: None,
            draws,
            summaries,
            elbo_trace: Vec::new(),
            elbo_checkpoints: Vec::new(),
            iterations: 0,
            converged: true,
            notes: Vec::new(),
        })
    }

    /// `m(θ_i)` for every domain.
    pub fn theta_mean(&self) -> Vec<f64> {
        self.summaries[..self.n_domains].iter().map(|s| s.mean).collect()
    }

    /// `v(θ_i)` for every domain.
    pub fn theta_var(&self) -> Vec<f64> {
        self.summaries[..self.n_domains].iter().map(|s| s.var).collect()
    }

    /// All stored draws of `θ_i`.
    pub fn theta_draws(&self, i: usize) -> Vec<f64> {
        self.draws.column(i)
    }

    pub fn n_draws(&self) -> usize {
        self.draws.n_rows()
    }

    /// Stored draw `r` as a parameter vector.
    pub fn param_draw(&self, r: usize) -> Result<ParamVector> {
        ParamVector::from_flat(self.kind, self.n_domains, self.px, self.pz, self.draws.row(r))
    }

    pub fn summary(&self, name: &str) -> Option<&ParamSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }
}

/// JSON has no NaN or infinity; non-finite entries are written as `null`
/// and read back as NaN.
mod nullable_floats {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

/// Column means and `n - 1` variances.
pub fn summarize(draws: &DrawMatrix, names: &[String]) -> Vec<ParamSummary> {
    let rows = draws.n_rows() as f64;
    let cols = draws.n_cols();
    let mut mean = vec![0.0; cols];
    for r in 0..draws.n_rows() {
        for (m, x) in mean.iter_mut().zip(draws.row(r)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows);
    let mut var = vec![0.0; cols];
    for r in 0..draws.n_rows() {
        for ((s, x), m) in var.iter_mut().zip(draws.row(r)).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= rows - 1.0);
    names
        .iter()
        .zip(mean.into_iter().zip(var))
        .map(|(name, (mean, var))| ParamSummary {
            name: name.clone(),
            mean,
            var,
        })
        .collect()
}
