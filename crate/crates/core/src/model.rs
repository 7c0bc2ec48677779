//! Fay-Herriot (FH) and co-modeled variance (FHV) hierarchical models.
//!
//! FH:
//! ```text
//! y_i | θ_i        ~ N(θ_i, v_i)            v_i known
//! θ_i | β, τ_u²    ~ N(x_i'β, τ_u²)
//! ```
//! FHV replaces the known `v_i` with a latent `σ_i²`:
//! ```text
//! y_i | θ_i, σ_i²  ~ N(θ_i, σ_i²)
//! θ_i | β, τ_u²    ~ N(x_i'β, τ_u²)
//! v_i | a, σ_i²    ~ G(a n_i*/2, a n_i*/(2σ_i²))     shape / rate
//! σ_i² | γ         ~ IG(2, exp(z_i'γ))             shape / scale
//! ```
//! The functions here are the single source of model truth used by the
//! estimators, the Gibbs oracle and the calibration procedure.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::density::{gamma_ln, half_normal_ln, half_normal_on_sd_ln, inv_gamma_ln, normal_ln};
use crate::error::{Error, Result};

/// One domain's direct estimate and auxiliary information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainObservation {
    pub domain_id: usize,
    /// Direct point estimate.
    pub y: f64,
    /// Direct variance estimate (known in FH, noisy in FHV).
    pub v: f64,
    /// Mean-model covariates.
    pub x: Vec<f64>,
    /// Variance-model covariates (FHV only; may be empty).
    pub z: Vec<f64>,
    /// Respondent count.
    pub n: u32,
}

/// An ordered collection of domains plus the standardized respondent counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    observations: Vec<DomainObservation>,
    n_star: Vec<f64>,
}

impl Dataset {
    /// Validates the observations and computes `n_star`.
    ///
    /// `v = 0` is accepted so that zero-noise templates can be expressed;
    /// the log-joints reject it.
    pub fn new(observations: Vec<DomainObservation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Argument("dataset has no domains".into()));
        }
        let px = observations[0].x.len();
        let pz = observations[0].z.len();
        for (i, obs) in observations.iter().enumerate() {
            if obs.x.len() != px {
                return Err(Error::dim(format!("observations[{i}].x"), px, obs.x.len()));
            }
            if obs.z.len() != pz {
                return Err(Error::dim(format!("observations[{i}].z"), pz, obs.z.len()));
            }
            if !obs.y.is_finite() || !obs.v.is_finite() || obs.v < 0.0 {
                return Err(Error::Domain(format!(
                    "domain {}: y must be finite and v finite and nonnegative (y={}, v={})",
                    obs.domain_id, obs.y, obs.v
                )));
            }
            if obs.n == 0 {
                return Err(Error::Domain(format!("domain {}: n must be >= 1", obs.domain_id)));
            }
        }
        let counts: Vec<u32> = observations.iter().map(|o| o.n).collect();
        let n_star = standardized_counts(&counts);
        Ok(Dataset {
            observations,
            n_star,
        })
    }

    pub fn observations(&self) -> &[DomainObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Number of mean-model covariates.
    pub fn px(&self) -> usize {
        self.observations[0].x.len()
    }

    /// Number of variance-model covariates.
    pub fn pz(&self) -> usize {
        self.observations[0].z.len()
    }

    pub fn n_star(&self) -> &[f64] {
        &self.n_star
    }

    pub fn y(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.y).collect()
    }

    pub fn v(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.v).collect()
    }

    pub fn domain_ids(&self) -> Vec<usize> {
        self.observations.iter().map(|o| o.domain_id).collect()
    }

    /// Copy of this dataset with the direct estimates replaced.
    pub fn with_estimates(&self, y: &[f64], v: &[f64]) -> Result<Dataset> {
        if y.len() != self.len() {
            return Err(Error::dim("y", self.len(), y.len()));
        }
        if v.len() != self.len() {
            return Err(Error::dim("v", self.len(), v.len()));
        }
        let observations = self
            .observations
            .iter()
            .zip(y.iter().zip(v))
            .map(|(o, (&y, &v))| DomainObservation { y, v, ..o.clone() })
            .collect();
        Dataset::new(observations)
    }

    /// Copy of this dataset with every `y_i` shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Dataset {
        let mut out = self.clone();
        for o in &mut out.observations {
            o.y += delta;
        }
        out
    }
}

/// Standardized respondent counts
/// `n* = (n_i - (min n - 1)) / (max n - min n)`, clamped to `[1/max n, 1]`;
/// all-equal counts give the all-ones vector.
pub fn standardized_counts(n: &[u32]) -> Vec<f64> {
    let (Some(&min), Some(&max)) = (n.iter().min(), n.iter().max()) else {
        return Vec::new();
    };
    if min == max {
        return vec![1.0; n.len()];
    }
    let floor = 1.0 / max as f64;
    let span = (max - min) as f64;
    n.iter()
        .map(|&ni| {
            let raw = (ni as f64 - (min as f64 - 1.0)) / span;
            raw.clamp(floor, 1.0)
        })
        .collect()
}

/// Prior on a real coefficient vector (β or γ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CoefPrior {
    /// Independent `N(mean, sd²)` on every coordinate.
    Normal { mean: f64, sd: f64 },
    /// Improper uniform.
    Flat,
    /// Point mass; the coefficients are not estimated.
    Fixed { values: Vec<f64> },
}

impl CoefPrior {
    pub fn is_fixed(&self) -> bool {
        matches!(self, CoefPrior::Fixed { .. })
    }

    pub fn ln_pdf(&self, b: &[f64]) -> f64 {
        match self {
            CoefPrior::Normal { mean, sd } => b.iter().map(|&x| normal_ln(x, *mean, sd * sd)).sum(),
            CoefPrior::Flat | CoefPrior::Fixed { .. } => 0.0,
        }
    }

    /// Derivative of `ln_pdf` with respect to one coordinate.
    #[inline]
    pub fn d_ln_pdf(&self, x: f64) -> f64 {
        match self {
            CoefPrior::Normal { mean, sd } => -(x - mean) / (sd * sd),
            CoefPrior::Flat | CoefPrior::Fixed { .. } => 0.0,
        }
    }

    fn validate(&self, field: &str, len: usize) -> Result<()> {
        match self {
            CoefPrior::Normal { sd, .. } if *sd <= 0.0 || !sd.is_finite() => {
                Err(Error::Domain(format!("{field} prior sd must be positive")))
            }
            CoefPrior::Fixed { values } if values.len() != len => {
                Err(Error::dim(format!("{field} fixed values"), len, values.len()))
            }
            _ => Ok(()),
        }
    }
}

/// Prior on a positive scalar (τ_u² or a).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScalePrior {
    /// Half-normal with scale `sd` on the square root of the parameter.
    HalfNormalOnSd { sd: f64 },
    /// Half-normal with scale `sd` on the parameter itself.
    HalfNormal { sd: f64 },
    /// Inverse gamma, shape/scale.
    InverseGamma { shape: f64, scale: f64 },
    /// Improper uniform on the positive reals.
    Flat,
    /// Point mass.
    Fixed { value: f64 },
}

impl ScalePrior {
    pub fn is_fixed(&self) -> bool {
        matches!(self, ScalePrior::Fixed { .. })
    }

    pub fn fixed_value(&self) -> Option<f64> {
        match self {
            ScalePrior::Fixed { value } => Some(*value),
            _ => None,
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            ScalePrior::HalfNormalOnSd { sd } => half_normal_on_sd_ln(x, *sd),
            ScalePrior::HalfNormal { sd } => half_normal_ln(x, *sd),
            ScalePrior::InverseGamma { shape, scale } => inv_gamma_ln(x, *shape, *scale),
            ScalePrior::Flat | ScalePrior::Fixed { .. } => 0.0,
        }
    }

    #[inline]
    pub fn d_ln_pdf(&self, x: f64) -> f64 {
        match self {
            ScalePrior::HalfNormalOnSd { sd } => -0.5 / (sd * sd) - 0.5 / x,
            ScalePrior::HalfNormal { sd } => -x / (sd * sd),
            ScalePrior::InverseGamma { shape, scale } => -(shape + 1.0) / x + scale / (x * x),
            ScalePrior::Flat | ScalePrior::Fixed { .. } => 0.0,
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        let ok = match self {
            ScalePrior::HalfNormalOnSd { sd } | ScalePrior::HalfNormal { sd } => *sd > 0.0,
            ScalePrior::InverseGamma { shape, scale } => *shape > 0.0 && *scale > 0.0,
            ScalePrior::Flat => true,
            ScalePrior::Fixed { value } => *value > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("{field} prior parameters must be positive")))
        }
    }
}

/// Hyperpriors for the top-level parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperPriorSpec {
    pub beta: CoefPrior,
    pub tau_u2: ScalePrior,
    pub a: ScalePrior,
    pub gamma: CoefPrior,
}

impl Default for HyperPriorSpec {
    fn default() -> Self {
        HyperPriorSpec {
            beta: CoefPrior::Normal { mean: 0.0, sd: 10.0 },
            tau_u2: ScalePrior::HalfNormalOnSd { sd: 5.0 },
            a: ScalePrior::HalfNormal { sd: 5.0 },
            gamma: CoefPrior::Normal { mean: 0.0, sd: 1.0 },
        }
    }
}

impl HyperPriorSpec {
    /// Improper flat priors everywhere.
    pub fn flat() -> Self {
        HyperPriorSpec {
            beta: CoefPrior::Flat,
            tau_u2: ScalePrior::Flat,
            a: ScalePrior::Flat,
            gamma: CoefPrior::Flat,
        }
    }

    pub fn validate(&self, kind: ModelKind, px: usize, pz: usize) -> Result<()> {
        self.beta.validate("beta", px)?;
        self.tau_u2.validate("tau_u2")?;
        if kind == ModelKind::Fhv {
            self.a.validate("a")?;
            self.gamma.validate("gamma", pz)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Fh,
    Fhv,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Fh => "fh",
            ModelKind::Fhv => "fhv",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fh" => Ok(ModelKind::Fh),
            "fhv" => Ok(ModelKind::Fhv),
            other => Err(Error::Argument(format!("unknown model `{other}`"))),
        }
    }
}

/// Model choice plus hyperpriors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hyper: HyperPriorSpec,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, hyper: HyperPriorSpec) -> Self {
        ModelSpec { kind, hyper }
    }

    pub fn fh(hyper: HyperPriorSpec) -> Self {
        ModelSpec::new(ModelKind::Fh, hyper)
    }

    pub fn fhv(hyper: HyperPriorSpec) -> Self {
        ModelSpec::new(ModelKind::Fhv, hyper)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FhParams {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau_u2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FhvParams {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau_u2: f64,
    pub sigma2: Vec<f64>,
    pub a: f64,
    pub gamma: Vec<f64>,
}

/// A full parameter draw for either model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamVector {
    Fh(FhParams),
    Fhv(FhvParams),
}

impl ParamVector {
    pub fn kind(&self) -> ModelKind {
        match self {
            ParamVector::Fh(_) => ModelKind::Fh,
            ParamVector::Fhv(_) => ModelKind::Fhv,
        }
    }

    pub fn theta(&self) -> &[f64] {
        match self {
            ParamVector::Fh(p) => &p.theta,
            ParamVector::Fhv(p) => &p.theta,
        }
    }

    /// Canonical flat layout: `θ (N), β (Px), τ_u²`, then for FHV
    /// `σ² (N), a, γ (Pz)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            ParamVector::Fh(p) => {
                out.extend_from_slice(&p.theta);
                out.extend_from_slice(&p.beta);
                out.push(p.tau_u2);
            }
            ParamVector::Fhv(p) => {
                out.extend_from_slice(&p.theta);
                out.extend_from_slice(&p.beta);
                out.push(p.tau_u2);
                out.extend_from_slice(&p.sigma2);
                out.push(p.a);
                out.extend_from_slice(&p.gamma);
            }
        }
        out
    }

    /// Inverse of [`ParamVector::to_flat`].
    pub fn from_flat(kind: ModelKind, n: usize, px: usize, pz: usize, flat: &[f64]) -> Result<Self> {
        let expected = canonical_len(kind, n, px, pz);
        if flat.len() != expected {
            return Err(Error::dim("flat parameter vector", expected, flat.len()));
        }
        let theta = flat[..n].to_vec();
        let beta = flat[n..n + px].to_vec();
        let tau_u2 = flat[n + px];
        Ok(match kind {
            ModelKind::Fh => ParamVector::Fh(FhParams { theta, beta, tau_u2 }),
            ModelKind::Fhv => {
                let o = n + px + 1;
                ParamVector::Fhv(FhvParams {
                    theta,
                    beta,
                    tau_u2,
                    sigma2: flat[o..o + n].to_vec(),
                    a: flat[o + n],
                    gamma: flat[o + n + 1..].to_vec(),
                })
            }
        })
    }
}

/// Length of the canonical flat parameter layout.
pub fn canonical_len(kind: ModelKind, n: usize, px: usize, pz: usize) -> usize {
    match kind {
        ModelKind::Fh => n + px + 1,
        ModelKind::Fhv => 2 * n + px + 2 + pz,
    }
}

/// Column names of the canonical flat layout.
pub fn canonical_names(kind: ModelKind, n: usize, px: usize, pz: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=n).map(|i| format!("theta[{i}]")).collect();
    names.extend((1..=px).map(|p| format!("beta[{p}]")));
    names.push("tau_u2".into());
    if kind == ModelKind::Fhv {
        names.extend((1..=n).map(|i| format!("sigma2[{i}]")));
        names.push("a".into());
        names.extend((1..=pz).map(|p| format!("gamma[{p}]")));
    }
    names
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_common(theta: &[f64], beta: &[f64], tau_u2: f64, data: &Dataset) -> Result<()> {
    if theta.len() != data.len() {
        return Err(Error::dim("theta", data.len(), theta.len()));
    }
    if beta.len() != data.px() {
        return Err(Error::dim("beta", data.px(), beta.len()));
    }
    if !(tau_u2 > 0.0) {
        return Err(Error::Domain(format!("tau_u2 must be positive, got {tau_u2}")));
    }
    Ok(())
}

/// FH log-joint density, `v_i` treated as known constants.
pub fn log_joint_fh(params: &FhParams, data: &Dataset, hyper: &HyperPriorSpec) -> Result<f64> {
    check_common(&params.theta, &params.beta, params.tau_u2, data)?;
    let mut total = 0.0;
    for (obs, &theta) in data.observations().iter().zip(&params.theta) {
        if !(obs.v > 0.0) {
            return Err(Error::Domain(format!(
                "domain {}: v must be positive in the FH likelihood",
                obs.domain_id
            )));
        }
        total += normal_ln(obs.y, theta, obs.v);
        total += normal_ln(theta, dot(&obs.x, &params.beta), params.tau_u2);
    }
    total += hyper.beta.ln_pdf(&params.beta);
    total += hyper.tau_u2.ln_pdf(params.tau_u2);
    Ok(total)
}

/// FHV log-joint density.
pub fn log_joint_fhv(params: &FhvParams, data: &Dataset, hyper: &HyperPriorSpec) -> Result<f64> {
    check_common(&params.theta, &params.beta, params.tau_u2, data)?;
    if params.sigma2.len() != data.len() {
        return Err(Error::dim("sigma2", data.len(), params.sigma2.len()));
    }
    if params.gamma.len() != data.pz() {
        return Err(Error::dim("gamma", data.pz(), params.gamma.len()));
    }
    if !(params.a > 0.0) {
        return Err(Error::Domain(format!("a must be positive, got {}", params.a)));
    }
    let mut total = 0.0;
    for (i, obs) in data.observations().iter().enumerate() {
        let s2 = params.sigma2[i];
        if !(s2 > 0.0) {
            return Err(Error::Domain(format!("sigma2[{i}] must be positive, got {s2}")));
        }
        if !(obs.v > 0.0) {
            return Err(Error::Domain(format!(
                "domain {}: v must be positive in the FHV likelihood",
                obs.domain_id
            )));
        }
        let theta = params.theta[i];
        let shape = params.a * data.n_star()[i] / 2.0;
        let rate = shape / s2;
        total += normal_ln(obs.y, theta, s2);
        total += normal_ln(theta, dot(&obs.x, &params.beta), params.tau_u2);
        total += gamma_ln(obs.v, shape, rate);
        total += inv_gamma_ln(s2, 2.0, dot(&obs.z, &params.gamma).exp());
    }
    total += hyper.beta.ln_pdf(&params.beta);
    total += hyper.tau_u2.ln_pdf(params.tau_u2);
    total += hyper.a.ln_pdf(params.a);
    total += hyper.gamma.ln_pdf(&params.gamma);
    Ok(total)
}

/// Log-joint for whichever model `params` belongs to.
pub fn log_joint(params: &ParamVector, data: &Dataset, hyper: &HyperPriorSpec) -> Result<f64> {
    match params {
        ParamVector::Fh(p) => log_joint_fh(p, data, hyper),
        ParamVector::Fhv(p) => log_joint_fhv(p, data, hyper),
    }
}

/// Law of the simulated mean-model covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateLaw {
    /// Each non-intercept covariate is drawn from `Unif(lo, hi)`.
    pub lo: f64,
    pub hi: f64,
    /// Prepend a constant 1 column.
    pub intercept: bool,
}

impl Default for CovariateLaw {
    fn default() -> Self {
        CovariateLaw {
            lo: 0.0,
            hi: 2.0,
            intercept: false,
        }
    }
}

impl CovariateLaw {
    fn draw<R: Rng + ?Sized>(&self, n_coef: usize, rng: &mut R) -> Result<Vec<f64>> {
        if !(self.hi > self.lo) {
            return Err(Error::Argument("covariate law requires hi > lo".into()));
        }
        let unif = Uniform::new(self.lo, self.hi).map_err(|e| Error::Argument(e.to_string()))?;
        let mut x = Vec::with_capacity(n_coef);
        if self.intercept {
            x.push(1.0);
        }
        while x.len() < n_coef {
            x.push(unif.sample(rng));
        }
        Ok(x)
    }
}

/// Truth-generation settings for synthetic FH data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FhTruthConfig {
    pub beta: Vec<f64>,
    pub tau_u2: f64,
    /// Sampling variance, identical across domains and reported exactly as `v_i`.
    pub sigma2: f64,
    pub covariates: CovariateLaw,
}

impl Default for FhTruthConfig {
    fn default() -> Self {
        FhTruthConfig {
            beta: vec![1.0],
            tau_u2: 1.0,
            sigma2: 1.0,
            covariates: CovariateLaw::default(),
        }
    }
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates `n` FH domains: `x ~ law`, `θ = x'β + u`, `u ~ N(0, τ_u²)`,
/// `y = θ + ε`, `ε ~ N(0, σ²)`, `v = σ²`.
pub fn simulate_fh<R: Rng + ?Sized>(
    truth: &FhTruthConfig,
    n: usize,
    rng: &mut R,
) -> Result<(FhParams, Dataset)> {
    if n == 0 {
        return Err(Error::Argument("number of domains must be positive".into()));
    }
    if truth.tau_u2 < 0.0 || truth.sigma2 < 0.0 {
        return Err(Error::Domain("truth variances must be nonnegative".into()));
    }
    let tau = truth.tau_u2.sqrt();
    let sd = truth.sigma2.sqrt();
    let mut theta = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    for i in 0..n {
        let x = truth.covariates.draw(truth.beta.len(), rng)?;
        let t = dot(&x, &truth.beta) + tau * std_normal(rng);
        let y = t + sd * std_normal(rng);
        theta.push(t);
        obs.push(DomainObservation {
            domain_id: i + 1,
            y,
            v: truth.sigma2,
            x,
            z: Vec::new(),
            n: 1,
        });
    }
    let params = FhParams {
        theta,
        beta: truth.beta.clone(),
        tau_u2: truth.tau_u2,
    };
    Ok((params, Dataset::new(obs)?))
}

/// Truth-generation settings for synthetic FHV data.
///
/// Respondent counts are log-uniform on `[n_min, n_max]` and the variance
/// covariates are `z_i = (1, ln n_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FhvTruthConfig {
    pub beta: Vec<f64>,
    pub tau_u2: f64,
    pub a: f64,
    pub gamma: Vec<f64>,
    pub n_min: u32,
    pub n_max: u32,
    pub covariates: CovariateLaw,
}

impl Default for FhvTruthConfig {
    fn default() -> Self {
        FhvTruthConfig {
            beta: vec![1.0],
            tau_u2: 1.0,
            a: 20.0,
            gamma: vec![0.5, -0.5],
            n_min: 1,
            n_max: 247,
            covariates: CovariateLaw::default(),
        }
    }
}

/// Generates `n` FHV domains from the FHV generative process.
pub fn simulate_fhv<R: Rng + ?Sized>(
    truth: &FhvTruthConfig,
    n: usize,
    rng: &mut R,
) -> Result<(FhvParams, Dataset)> {
    if n == 0 {
        return Err(Error::Argument("number of domains must be positive".into()));
    }
    if truth.gamma.len() != 2 {
        return Err(Error::dim("gamma (z = [1, ln n])", 2, truth.gamma.len()));
    }
    if truth.n_min == 0 || truth.n_max < truth.n_min {
        return Err(Error::Argument("respondent range requires 1 <= n_min <= n_max".into()));
    }
    if !(truth.a > 0.0) || truth.tau_u2 < 0.0 {
        return Err(Error::Domain("a must be positive and tau_u2 nonnegative".into()));
    }
    let log_range = Uniform::new_inclusive((truth.n_min as f64).ln(), (truth.n_max as f64).ln())
        .map_err(|e| Error::Argument(e.to_string()))?;
    let counts: Vec<u32> = (0..n)
        .map(|_| {
            (log_range.sample(rng).exp().round() as u32).clamp(truth.n_min, truth.n_max)
        })
        .collect();
    let mut obs = Vec::with_capacity(n);
    for (i, &count) in counts.iter().enumerate() {
        obs.push(DomainObservation {
            domain_id: i + 1,
            y: 0.0,
            v: 1.0,
            x: truth.covariates.draw(truth.beta.len(), rng)?,
            z: vec![1.0, (count as f64).ln()],
            n: count,
        });
    }
    simulate_fhv_like(truth, &Dataset::new(obs)?, rng)
}

/// Draws fresh FHV truths and estimates for the domains of `template`,
/// keeping its covariates and respondent counts.
pub fn simulate_fhv_like<R: Rng + ?Sized>(
    truth: &FhvTruthConfig,
    template: &Dataset,
    rng: &mut R,
) -> Result<(FhvParams, Dataset)> {
    if template.pz() != truth.gamma.len() {
        return Err(Error::dim("gamma", template.pz(), truth.gamma.len()));
    }
    if template.px() != truth.beta.len() {
        return Err(Error::dim("beta", template.px(), truth.beta.len()));
    }
    if !(truth.a > 0.0) || truth.tau_u2 < 0.0 {
        return Err(Error::Domain("a must be positive and tau_u2 nonnegative".into()));
    }
    let n = template.len();
    let n_star = template.n_star();
    let tau = truth.tau_u2.sqrt();
    let mut theta = Vec::with_capacity(n);
    let mut sigma2 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for (i, o) in template.observations().iter().enumerate() {
        let scale = dot(&o.z, &truth.gamma).exp();
        // IG(2, scale) as scale / G(2, 1)
        let g: f64 = Gamma::new(2.0, 1.0)
            .map_err(|e| Error::Domain(e.to_string()))?
            .sample(rng);
        let s2 = scale / g;
        let t = dot(&o.x, &truth.beta) + tau * std_normal(rng);
        y.push(t + s2.sqrt() * std_normal(rng));
        v.push(draw_variance(truth.a, n_star[i], s2, rng)?);
        theta.push(t);
        sigma2.push(s2);
    }
    let params = FhvParams {
        theta,
        beta: truth.beta.clone(),
        tau_u2: truth.tau_u2,
        sigma2,
        a: truth.a,
        gamma: truth.gamma.clone(),
    };
    Ok((params, template.with_estimates(&y, &v)?))
}

/// `v ~ G(a n*/2, a n*/(2σ²))`, floored at the smallest positive normal
/// float so that tiny shapes cannot produce an exact zero.
fn draw_variance<R: Rng + ?Sized>(a: f64, n_star: f64, sigma2: f64, rng: &mut R) -> Result<f64> {
    let shape = a * n_star / 2.0;
    let rate = shape / sigma2;
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Domain(format!("gamma(shape={shape}, rate={rate}): {e}")))?;
    Ok(dist.sample(rng).max(f64::MIN_POSITIVE))
}

/// One replicate dataset from the posterior predictive given a parameter draw.
///
/// FH copies `v_i` from the template; FHV redraws `v_i` from its gamma
/// likelihood.
pub fn posterior_predictive_draw<R: Rng + ?Sized>(
    spec: &ModelSpec,
    param_draw: &ParamVector,
    template: &Dataset,
    rng: &mut R,
) -> Result<Dataset> {
    let n = template.len();
    let theta = param_draw.theta();
    if theta.len() != n {
        return Err(Error::dim("theta", n, theta.len()));
    }
    match (spec.kind, param_draw) {
        (ModelKind::Fh, _) => {
            let v = template.v();
            let y: Vec<f64> = theta
                .iter()
                .zip(&v)
                .map(|(&t, &vi)| t + vi.sqrt() * std_normal(rng))
                .collect();
            template.with_estimates(&y, &v)
        }
        (ModelKind::Fhv, ParamVector::Fhv(p)) => {
            if p.sigma2.len() != n {
                return Err(Error::dim("sigma2", n, p.sigma2.len()));
            }
            let mut y = Vec::with_capacity(n);
            let mut v = Vec::with_capacity(n);
            for i in 0..n {
                y.push(theta[i] + p.sigma2[i].sqrt() * std_normal(rng));
                v.push(draw_variance(p.a, template.n_star()[i], p.sigma2[i], rng)?);
            }
            template.with_estimates(&y, &v)
        }
        (ModelKind::Fhv, ParamVector::Fh(_)) => Err(Error::Argument(
            "FHV posterior predictive requires a sigma2 draw".into(),
        )),
    }
}
