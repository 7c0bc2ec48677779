//! Mean-field Gaussian variational inference on the unconstrained space.
//!
//! The variational family is `q(u) = Π_d N(mu_d, exp(2 ω_d))`. The ELBO
//! `E_q[log p̃(u)] + H(q)` is maximized by stochastic gradient ascent with
//! reparameterization gradients (`u = mu + exp(ω) ∘ η`, `η ~ N(0, I)`) and a
//! per-coordinate RMS-normalized step.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::ln_2pi;
use crate::error::{Error, Result};
use crate::fit::{DrawMatrix, EstimatorKind, PosteriorFit, VariationalParams};
use crate::model::{Dataset, ModelSpec};
use crate::parallel::{derive_seed, rng_from_seed, stream};
use crate::target::{LogDensity, ModelTarget};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdviConfig {
    /// Monte Carlo samples per gradient.
    pub n_grad_samples: usize,
    /// Base step size.
    pub step_size: f64,
    /// The step at iteration `t` is `step_size * t^-step_decay`.
    pub step_decay: f64,
    /// Decay of the squared-gradient moving average.
    pub rms_decay: f64,
    pub max_iters: usize,
    /// Iterations between stop-rule evaluations.
    pub elbo_window: usize,
    pub rel_tol: f64,
    /// Common-random-number samples for stop-rule ELBO evaluations.
    pub n_elbo_samples: usize,
    pub n_posterior_draws: usize,
    /// Initial `omega` (log sd) for every coordinate.
    pub init_log_sd: f64,
    pub seed: u64,
}

impl Default for AdviConfig {
    fn default() -> Self {
        AdviConfig {
            n_grad_samples: 10,
            step_size: 0.1,
            step_decay: 0.5,
            rms_decay: 0.9,
            max_iters: 20_000,
            elbo_window: 100,
            rel_tol: 1e-4,
            n_elbo_samples: 100,
            n_posterior_draws: 1000,
            init_log_sd: -1.0,
            seed: 1,
        }
    }
}

const RMS_EPS: f64 = 1e-8;

impl AdviConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.n_grad_samples >= 1
            && self.step_size > 0.0
            && self.max_iters >= 1
            && self.elbo_window >= 1
            && self.rel_tol > 0.0
            && self.rel_tol < 1.0
            && self.n_elbo_samples >= 1
            && self.n_posterior_draws >= 2
            && (0.0..1.0).contains(&self.rms_decay)
            && self.step_decay >= 0.0;
        if positive {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid ADVI configuration: {self:?}")))
        }
    }
}

/// Closed-form entropy of the factorized Gaussian.
pub fn entropy(vp: &VariationalParams) -> f64 {
    vp.omega.iter().sum::<f64>() + 0.5 * vp.dim() as f64 * (1.0 + ln_2pi())
}

fn check_dims<T: LogDensity + ?Sized>(target: &T, vp: &VariationalParams) -> Result<()> {
    if vp.mu.len() != target.dim() || vp.omega.len() != target.dim() {
        return Err(Error::dim("variational parameters", target.dim(), vp.mu.len()));
    }
    Ok(())
}

fn standard_normals<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<f64> {
    (0..dim * count).map(|_| StandardNormal.sample(rng)).collect()
}

#[inline]
fn reparameterize(vp: &VariationalParams, eta: &[f64], u: &mut [f64]) {
    for d in 0..u.len() {
        u[d] = vp.mu[d] + vp.omega[d].exp() * eta[d];
    }
}

/// ELBO at fixed base draws `eta` (row-major, `dim` columns).
pub fn elbo_at<T: LogDensity + ?Sized>(target: &T, vp: &VariationalParams, eta: &[f64]) -> Result<f64> {
    check_dims(target, vp)?;
    let dim = target.dim();
    let count = eta.len() / dim.max(1);
    let mut u = vec![0.0; dim];
    let mut total = 0.0;
    for s in 0..count {
        reparameterize(vp, &eta[s * dim..(s + 1) * dim], &mut u);
        let lp = target.value(&u);
        if !lp.is_finite() {
            return Err(Error::NonFinite { point: u });
        }
        total += lp;
    }
    Ok(total / count as f64 + entropy(vp))
}

/// Reparameterization gradient of [`elbo_at`] at fixed base draws.
///
/// Returns `(grad_mu, grad_omega, elbo)`; the ELBO value comes from the same
/// evaluations.
pub fn elbo_gradient_at<T: LogDensity + ?Sized>(
    target: &T,
    vp: &VariationalParams,
    eta: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    check_dims(target, vp)?;
    let dim = target.dim();
    let count = eta.len() / dim.max(1);
    let mut u = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut grad_mu = vec![0.0; dim];
    let mut grad_omega = vec![0.0; dim];
    let mut total = 0.0;
    for s in 0..count {
        let e = &eta[s * dim..(s + 1) * dim];
        reparameterize(vp, e, &mut u);
        let lp = target.value_and_grad(&u, &mut g);
        if !lp.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { point: u });
        }
        total += lp;
        for d in 0..dim {
            grad_mu[d] += g[d];
            grad_omega[d] += g[d] * e[d] * vp.omega[d].exp();
        }
    }
    let scale = 1.0 / count as f64;
    grad_mu.iter_mut().for_each(|x| *x *= scale);
    grad_omega.iter_mut().for_each(|x| *x = *x * scale + 1.0);
    Ok((grad_mu, grad_omega, total * scale + entropy(vp)))
}

/// Unbiased Monte Carlo ELBO estimate from `n_samples` fresh draws.
pub fn elbo_estimate<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    vp: &VariationalParams,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let eta = standard_normals(target.dim(), n_samples.max(1), rng);
    elbo_at(target, vp, &eta)
}

/// Reparameterization gradient estimate from `n_samples` fresh draws.
pub fn elbo_gradient<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    vp: &VariationalParams,
    n_samples: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let eta = standard_normals(target.dim(), n_samples.max(1), rng);
    elbo_gradient_at(target, vp, &eta).map(|(gm, go, _)| (gm, go))
}

/// Result of the optimization loop on an arbitrary target.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationRun {
    pub variational: VariationalParams,
    pub elbo_trace: Vec<f64>,
    pub elbo_checkpoints: Vec<f64>,
    /// Monte Carlo standard error of each checkpoint.
    pub checkpoint_se: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn crn_checkpoint<T: LogDensity + ?Sized>(target: &T, vp: &VariationalParams, eta: &[f64]) -> Option<(f64, f64)> {
    let dim = target.dim();
    let count = eta.len() / dim.max(1);
    let mut u = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut values = Vec::with_capacity(count);
    for s in 0..count {
        reparameterize(vp, &eta[s * dim..(s + 1) * dim], &mut u);
        let lp = target.value_and_grad(&u, &mut g);
        if !lp.is_finite() {
            return None;
        }
        values.push(lp);
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let var = if count > 1 {
        values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64
    } else {
        0.0
    };
    Some((mean + entropy(vp), (var / count as f64).sqrt()))
}

/// Stochastic gradient ascent on the ELBO.
///
/// Stops after `max_iters` or when the relative change between consecutive
/// common-random-number ELBO checkpoints (every `elbo_window` iterations)
/// falls below `rel_tol`. Non-finite iterations are skipped; `elbo_window`
/// consecutive non-finite iterations abort the fit.
pub fn optimize<T: LogDensity + ?Sized>(target: &T, config: &AdviConfig) -> Result<OptimizationRun> {
    config.validate()?;
    let dim = target.dim();
    let mut vp = VariationalParams::new(dim, 0.0, config.init_log_sd);
    let mut grad_rng = rng_from_seed(derive_seed(config.seed, stream::VB_GRAD, 0));
    let mut crn_rng = rng_from_seed(derive_seed(config.seed, stream::VB_CRN, 0));
    let crn_eta = standard_normals(dim, config.n_elbo_samples, &mut crn_rng);

    let mut acc_mu = vec![0.0; dim];
    let mut acc_omega = vec![0.0; dim];
    let mut trace = Vec::new();
    let mut checkpoints: Vec<f64> = Vec::new();
    let mut checkpoint_se = Vec::new();
    let mut bad_streak = 0usize;
    let mut converged = false;
    let mut iterations = 0;
    let mut first = true;
    let mut eta = vec![0.0; dim * config.n_grad_samples];

    for t in 1..=config.max_iters {
        iterations = t;
        eta.iter_mut().for_each(|e| *e = StandardNormal.sample(&mut grad_rng));
        let step = match elbo_gradient_at(target, &vp, &eta) {
            Ok(step) => step,
            Err(Error::NonFinite { .. }) => {
                bad_streak += 1;
                if bad_streak >= config.elbo_window {
                    return Err(Error::FitFailure(format!(
                        "non-finite ELBO for {bad_streak} consecutive iterations (iteration {t})"
                    )));
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        bad_streak = 0;
        let (gm, go, elbo) = step;
        trace.push(elbo);

        let rate = config.step_size * (t as f64).powf(-config.step_decay);
        let rho = config.rms_decay;
        for d in 0..dim {
            if first {
                acc_mu[d] = gm[d] * gm[d];
                acc_omega[d] = go[d] * go[d];
            } else {
                acc_mu[d] = rho * acc_mu[d] + (1.0 - rho) * gm[d] * gm[d];
                acc_omega[d] = rho * acc_omega[d] + (1.0 - rho) * go[d] * go[d];
            }
            vp.mu[d] += rate * gm[d] / (acc_mu[d].sqrt() + RMS_EPS);
            vp.omega[d] += rate * go[d] / (acc_omega[d].sqrt() + RMS_EPS);
        }
        first = false;

        if t % config.elbo_window == 0 {
            if let Some((value, se)) = crn_checkpoint(target, &vp, &crn_eta) {
                if let Some(&prev) = checkpoints.last() {
                    let rel = ((value - prev) / value.abs().max(f64::MIN_POSITIVE)).abs();
                    checkpoints.push(value);
                    checkpoint_se.push(se);
                    if rel < config.rel_tol {
                        converged = true;
                        break;
                    }
                } else {
                    checkpoints.push(value);
                    checkpoint_se.push(se);
                }
            }
        }
    }

    Ok(OptimizationRun {
        variational: vp,
        elbo_trace: trace,
        elbo_checkpoints: checkpoints,
        checkpoint_se,
        iterations,
        converged,
    })
}

/// Fits the model by ADVI and summarizes `n_posterior_draws` draws from `q`.
pub fn fit(spec: &ModelSpec, data: &Dataset, config: &AdviConfig) -> Result<PosteriorFit> {
    let target = ModelTarget::new(spec, data)?;
    let run = optimize(&target, config)?;
    let map = target.map();
    let mut draws_rng = rng_from_seed(derive_seed(config.seed, stream::VB_DRAWS, 0));
    let cols = crate::model::canonical_len(spec.kind, data.len(), data.px(), data.pz());
    let mut draws = DrawMatrix::new(cols);
    let mut u = vec![0.0; map.dim()];
    for _ in 0..config.n_posterior_draws {
        for d in 0..u.len() {
            let e: f64 = StandardNormal.sample(&mut draws_rng);
            u[d] = run.variational.mu[d] + run.variational.omega[d].exp() * e;
        }
        draws.push_row(&map.constrain(&u)?.to_flat());
    }
    let mut fit = PosteriorFit::from_draws(spec.kind, data.len(), data.px(), data.pz(), EstimatorKind::Vb, draws)?;
    fit.variational = Some(run.variational);
    fit.elbo_trace = run.elbo_trace;
    fit.elbo_checkpoints = run.elbo_checkpoints;
    fit.iterations = run.iterations;
    fit.converged = run.converged;
    Ok(fit)
}
