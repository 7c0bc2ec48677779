//! Parametric-bootstrap calibration of posterior means, variances and
//! intervals.
//!
//! 1. Draw `A` parameter vectors from the initial fit and simulate one
//!    replicate dataset from each.
//! 2. Refit every replicate with the same estimator.
//! 3. Bias: `a_i = m(θ_i) - mean_α m(θ_i^(α))`, `m̃(θ_i) = m(θ_i) + a_i`.
//! 4. Pivots `T_i^(α) = (m(θ_i^(α)) - θ_i^(α)) / √v(θ_i^(α))`, scale
//!    `c_i = sd(T_i)` (divisor `A_ok`), adjusted pivots
//!    `T̃ = (T - T̄) / c_i`.
//! 5. Pivotal interval `m̃ + √(v c) [t̃_γ, t̃_{1-γ}]`.
//! 6. Rescaled interval: percentiles of draws mapped to mean `m̃` and
//!    variance `v c`.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::fit::PosteriorFit;
use crate::model::{posterior_predictive_draw, Dataset, ModelSpec, ParamVector};
use crate::parallel::{derive_seed, par_map, rng_from_seed, stream};
use crate::quantile::{quantile_sorted, sort_values, QuantileTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Number of bootstrap replicates `A`.
    pub replicates: usize,
    /// Tail level; nominal coverage is `1 - 2 γ`.
    pub gamma: f64,
    /// Use `m̃ = m + a` when building intervals (otherwise `m̃ = m`).
    pub bias_correction: bool,
    /// Invert the pivot as `[m̃ - s t̃_{1-γ}, m̃ - s t̃_γ]` instead of the
    /// plus-sign form.
    pub strict_inversion: bool,
    /// Minimum successful replicates; defaults to `ceil(0.9 A)`.
    pub min_replicates: Option<usize>,
    pub c_floor: f64,
    pub workers: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            replicates: 500,
            gamma: 0.25,
            bias_correction: false,
            strict_inversion: false,
            min_replicates: None,
            c_floor: 1e-3,
            workers: 1,
        }
    }
}

impl CalibrationConfig {
    pub fn min_successes(&self) -> usize {
        self.min_replicates
            .unwrap_or_else(|| (0.9 * self.replicates as f64).ceil() as usize)
            .max(2)
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if self.replicates < 2 {
            return Err(Error::Argument("calibration needs at least two replicates".into()));
        }
        if !(self.c_floor > 0.0) {
            return Err(Error::Argument("c_floor must be positive".into()));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 0.5 {
        Ok(())
    } else {
        Err(Error::Argument(format!("gamma must lie in (0, 0.5), got {gamma}")))
    }
}

/// One bootstrap replicate: a stored posterior draw treated as truth and
/// the dataset simulated from it.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateDraw {
    /// 1-based replicate index.
    pub alpha: usize,
    /// Row of the initial fit's draw matrix used as truth.
    pub draw_index: usize,
    pub truth: ParamVector,
    pub data: Dataset,
}

/// Samples `a` distinct stored draws and simulates a replicate from each.
pub fn draw_replicates<R: Rng + ?Sized>(
    fit: &PosteriorFit,
    spec: &ModelSpec,
    template: &Dataset,
    a: usize,
    rng: &mut R,
) -> Result<Vec<ReplicateDraw>> {
    let available = fit.n_draws();
    if a > available {
        return Err(Error::Argument(format!(
            "{a} replicates requested but the fit stores only {available} draws; refit with n_posterior_draws >= {a}"
        )));
    }
    let picks = sample(rng, available, a).into_vec();
    picks
        .into_iter()
        .enumerate()
        .map(|(k, row)| {
            let truth = fit.param_draw(row)?;
            let data = posterior_predictive_draw(spec, &truth, template, rng)?;
            Ok(ReplicateDraw {
                alpha: k + 1,
                draw_index: row,
                truth,
                data,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum ReplicateStatus {
    Success,
    Failure(String),
}

/// Posterior means and variances of θ from one replicate refit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFitSummary {
    pub alpha: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub status: ReplicateStatus,
    pub iterations: usize,
    pub final_elbo: Option<f64>,
}

impl ReplicateFitSummary {
    pub fn is_success(&self) -> bool {
        self.status == ReplicateStatus::Success
    }
}

/// Refits every replicate; replicate `α` uses the seed derived from
/// `(master_seed, α)`, and output is ordered by `α`.
pub fn refit_replicates<E: Estimator + ?Sized>(
    replicates: &[ReplicateDraw],
    spec: &ModelSpec,
    estimator: &E,
    master_seed: u64,
    workers: usize,
    min_successes: usize,
) -> Result<Vec<ReplicateFitSummary>> {
    let summaries = par_map(workers, replicates, |_, rep| {
        let seed = derive_seed(master_seed, stream::REPLICATE_FIT, rep.alpha as u64);
        let outcome = estimator
            .estimate(spec, &rep.data, seed)
            .and_then(|fit| {
                let v = fit.theta_var();
                if let Some(i) = v.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
                    return Err(Error::FitFailure(format!("non-positive v(theta) in domain {}", i + 1)));
                }
                Ok(fit)
            });
        let summary = match outcome {
            Ok(fit) => ReplicateFitSummary {
                alpha: rep.alpha,
                m: fit.theta_mean(),
                v: fit.theta_var(),
                status: ReplicateStatus::Success,
                iterations: fit.iterations,
                final_elbo: fit.elbo_checkpoints.last().copied(),
            },
            Err(e) => ReplicateFitSummary {
                alpha: rep.alpha,
                m: Vec::new(),
                v: Vec::new(),
                status: ReplicateStatus::Failure(e.to_string()),
                iterations: 0,
                final_elbo: None,
            },
        };
        log::info!(
            target: "replicate",
            "alpha={} iters={} elbo={} status={}",
            summary.alpha,
            summary.iterations,
            summary.final_elbo.map_or("na".to_string(), |e| format!("{e:.6}")),
            match &summary.status {
                ReplicateStatus::Success => "success".to_string(),
                ReplicateStatus::Failure(r) => format!("failure({r})"),
            }
        );
        summary
    });
    let successes = summaries.iter().filter(|s| s.is_success()).count();
    if successes < min_successes {
        return Err(Error::InsufficientReplicates {
            successes,
            requested: replicates.len(),
            minimum: min_successes,
        });
    }
    Ok(summaries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasAdjustment {
    pub a: Vec<f64>,
    /// `m + a` when enabled, otherwise `m`.
    pub m_tilde: Vec<f64>,
}

/// First-moment adjustment from successful replicate means.
pub fn bias_adjustment(initial_m: &[f64], summaries: &[ReplicateFitSummary], enabled: bool) -> Result<BiasAdjustment> {
    let ok: Vec<&ReplicateFitSummary> = summaries.iter().filter(|s| s.is_success()).collect();
    if ok.len() < 2 {
        return Err(Error::Argument("bias adjustment needs at least two successful replicates".into()));
    }
    let n = initial_m.len();
    let mut mean = vec![0.0; n];
    for s in &ok {
        if s.m.len() != n {
            return Err(Error::dim(format!("replicate {} means", s.alpha), n, s.m.len()));
        }
        for (acc, x) in mean.iter_mut().zip(&s.m) {
            *acc += x;
        }
    }
    let count = ok.len() as f64;
    let a: Vec<f64> = initial_m.iter().zip(&mean).map(|(m, s)| m - s / count).collect();
    let m_tilde = if enabled {
        initial_m.iter().zip(&a).map(|(m, a)| m + a).collect()
    } else {
        initial_m.to_vec()
    };
    Ok(BiasAdjustment { a, m_tilde })
}

/// Bootstrap pivots, one row per successful replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PivotMatrix {
    pub n_domains: usize,
    pub alphas: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

impl PivotMatrix {
    pub fn a_ok(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[i]).collect()
    }
}

/// `T[α, i] = (m(θ_i^(α)) - θ_i^(α)) / √v(θ_i^(α))` over successful replicates.
pub fn pivot_statistics(replicates: &[ReplicateDraw], summaries: &[ReplicateFitSummary]) -> Result<PivotMatrix> {
    let n_domains = replicates
        .first()
        .map(|r| r.truth.theta().len())
        .ok_or_else(|| Error::Argument("no replicates".into()))?;
    let mut alphas = Vec::new();
    let mut rows = Vec::new();
    for summary in summaries.iter().filter(|s| s.is_success()) {
        let rep = replicates
            .iter()
            .find(|r| r.alpha == summary.alpha)
            .ok_or_else(|| Error::Argument(format!("no replicate with alpha {}", summary.alpha)))?;
        let theta = rep.truth.theta();
        if summary.m.len() != n_domains || summary.v.len() != n_domains {
            return Err(Error::dim(format!("replicate {} summary", summary.alpha), n_domains, summary.m.len()));
        }
        let mut row = Vec::with_capacity(n_domains);
        for i in 0..n_domains {
            let v = summary.v[i];
            if !(v > 0.0) {
                return Err(Error::Domain(format!(
                    "v(theta) must be positive (alpha {}, domain {})",
                    summary.alpha,
                    i + 1
                )));
            }
            row.push((summary.m[i] - theta[i]) / v.sqrt());
        }
        alphas.push(summary.alpha);
        rows.push(row);
    }
    Ok(PivotMatrix { n_domains, alphas, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleAdjustment {
    pub c: Vec<f64>,
    pub t_bar: Vec<f64>,
    /// Sorted adjusted pivots `T̃` per domain.
    pub tables: Vec<QuantileTable>,
    /// Domains whose `c` hit the floor.
    pub floored: Vec<usize>,
}

/// `c_i = √(A_ok⁻¹ Σ (T - T̄)²)`, floored at `c_floor`.
pub fn scale_adjustment(pivots: &PivotMatrix, c_floor: f64) -> Result<ScaleAdjustment> {
    let a_ok = pivots.a_ok();
    if a_ok < 2 {
        return Err(Error::Argument("scale adjustment needs at least two pivots per domain".into()));
    }
    let mut c = Vec::with_capacity(pivots.n_domains);
    let mut t_bar = Vec::with_capacity(pivots.n_domains);
    let mut tables = Vec::with_capacity(pivots.n_domains);
    let mut floored = Vec::new();
    for i in 0..pivots.n_domains {
        let col = pivots.column(i);
        let mean = col.iter().sum::<f64>() / a_ok as f64;
        let var = col.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / a_ok as f64;
        let mut ci = var.sqrt();
        if !(ci >= c_floor) {
            log::warn!("domain {}: pivot sd {ci} below floor, using c = {c_floor}", i + 1);
            floored.push(i);
            ci = c_floor;
        }
        let adjusted: Vec<f64> = col.iter().map(|t| (t - mean) / ci).collect();
        tables.push(QuantileTable::new(adjusted)?);
        c.push(ci);
        t_bar.push(mean);
    }
    Ok(ScaleAdjustment { c, t_bar, tables, floored })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn covers(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Pivotal interval from the adjusted-pivot quantiles.
pub fn pivotal_interval(m_tilde: f64, v: f64, c: f64, table: &QuantileTable, gamma: f64, strict: bool) -> Interval {
    let s = (v * c).sqrt();
    let t_lo = table.quantile(gamma);
    let t_hi = table.quantile(1.0 - gamma);
    if strict {
        Interval {
            lo: m_tilde - s * t_hi,
            hi: m_tilde - s * t_lo,
        }
    } else {
        Interval {
            lo: m_tilde + s * t_lo,
            hi: m_tilde + s * t_hi,
        }
    }
}

pub fn pivotal_intervals(
    m_tilde: &[f64],
    v: &[f64],
    c: &[f64],
    tables: &[QuantileTable],
    gamma: f64,
    strict: bool,
) -> Result<Vec<Interval>> {
    check_gamma(gamma)?;
    let n = m_tilde.len();
    for (name, len) in [("v", v.len()), ("c", c.len()), ("quantile tables", tables.len())] {
        if len != n {
            return Err(Error::dim(name, n, len));
        }
    }
    Ok((0..n)
        .map(|i| pivotal_interval(m_tilde[i], v[i], c[i], &tables[i], gamma, strict))
        .collect())
}

/// Percentile interval of one domain's draws after mapping them to mean
/// `m̃` and variance `v c`.
pub fn rescaled_interval(draws: &[f64], m: f64, v: f64, m_tilde: f64, c: f64, gamma: f64) -> Result<Interval> {
    check_gamma(gamma)?;
    if draws.len() < 2 {
        return Err(Error::Argument("rescaled interval needs at least two draws".into()));
    }
    if !(v > 0.0) {
        return Err(Error::Domain(format!("v must be positive, got {v}")));
    }
    let factor = (v * c).sqrt() / v.sqrt();
    let mut adjusted: Vec<f64> = draws.iter().map(|t| (t - m) * factor + m_tilde).collect();
    sort_values(&mut adjusted);
    Ok(Interval {
        lo: quantile_sorted(&adjusted, gamma),
        hi: quantile_sorted(&adjusted, 1.0 - gamma),
    })
}

pub fn rescaled_intervals(
    fit: &PosteriorFit,
    m_tilde: &[f64],
    c: &[f64],
    gamma: f64,
) -> Result<Vec<Interval>> {
    if fit.n_draws() < 100 {
        log::warn!("rescaled intervals from only {} draws", fit.n_draws());
    }
    let m = fit.theta_mean();
    let v = fit.theta_var();
    (0..fit.n_domains)
        .map(|i| rescaled_interval(&fit.theta_draws(i), m[i], v[i], m_tilde[i], c[i], gamma))
        .collect()
}

/// Equal-tailed percentile interval of the raw draws.
pub fn original_intervals(fit: &PosteriorFit, gamma: f64) -> Result<Vec<Interval>> {
    check_gamma(gamma)?;
    Ok((0..fit.n_domains)
        .map(|i| {
            let mut d = fit.theta_draws(i);
            sort_values(&mut d);
            Interval {
                lo: quantile_sorted(&d, gamma),
                hi: quantile_sorted(&d, 1.0 - gamma),
            }
        })
        .collect())
}

/// Per-domain bias, scale and adjusted-pivot quantile tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationAdjustment {
    pub domain_ids: Vec<usize>,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub tables: Vec<QuantileTable>,
    pub a_ok: usize,
}

/// Everything needed to report calibrated intervals for one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedIntervals {
    pub domain_ids: Vec<usize>,
    pub gamma: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub m_tilde: Vec<f64>,
    pub v_tilde: Vec<f64>,
    pub original: Vec<Interval>,
    pub pivotal: Vec<Interval>,
    pub rescaled: Vec<Interval>,
}

/// Applies an adjustment to a fit: the fit's own `m`, `v` and draws with the
/// adjustment's `a`, `c` and quantile tables.
pub fn apply_adjustment(
    fit: &PosteriorFit,
    domain_ids: &[usize],
    adjustment: &CalibrationAdjustment,
    config: &CalibrationConfig,
) -> Result<CalibratedIntervals> {
    let n = fit.n_domains;
    if adjustment.c.len() != n || adjustment.a.len() != n {
        return Err(Error::dim("adjustment domains", n, adjustment.c.len()));
    }
    let m = fit.theta_mean();
    let v = fit.theta_var();
    let m_tilde: Vec<f64> = if config.bias_correction {
        m.iter().zip(&adjustment.a).map(|(m, a)| m + a).collect()
    } else {
        m.clone()
    };
    let v_tilde: Vec<f64> = v.iter().zip(&adjustment.c).map(|(v, c)| v * c).collect();
    let pivotal = pivotal_intervals(&m_tilde, &v, &adjustment.c, &adjustment.tables, config.gamma, config.strict_inversion)?;
    let rescaled = rescaled_intervals(fit, &m_tilde, &adjustment.c, config.gamma)?;
    let original = original_intervals(fit, config.gamma)?;
    Ok(CalibratedIntervals {
        domain_ids: domain_ids.to_vec(),
        gamma: config.gamma,
        m,
        v,
        m_tilde,
        v_tilde,
        original,
        pivotal,
        rescaled,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationOutcome {
    pub adjustment: CalibrationAdjustment,
    pub intervals: CalibratedIntervals,
    pub replicates: Vec<ReplicateFitSummary>,
    pub pivots: PivotMatrix,
    pub floored: Vec<usize>,
}

/// Full calibration of `fit` (already estimated on `data`).
pub fn calibrate<E: Estimator + ?Sized>(
    fit: &PosteriorFit,
    spec: &ModelSpec,
    data: &Dataset,
    estimator: &E,
    config: &CalibrationConfig,
    master_seed: u64,
) -> Result<CalibrationOutcome> {
    config.validate()?;
    let mut rng = rng_from_seed(derive_seed(master_seed, stream::REPLICATE_DATA, 0));
    let replicates = draw_replicates(fit, spec, data, config.replicates, &mut rng)?;
    let summaries = refit_replicates(
        &replicates,
        spec,
        estimator,
        master_seed,
        config.workers,
        config.min_successes(),
    )?;
    let bias = bias_adjustment(&fit.theta_mean(), &summaries, config.bias_correction)?;
    let pivots = pivot_statistics(&replicates, &summaries)?;
    let scale = scale_adjustment(&pivots, config.c_floor)?;
    let adjustment = CalibrationAdjustment {
        domain_ids: data.domain_ids(),
        a: bias.a,
        c: scale.c,
        tables: scale.tables,
        a_ok: pivots.a_ok(),
    };
    let intervals = apply_adjustment(fit, &data.domain_ids(), &adjustment, config)?;
    Ok(CalibrationOutcome {
        adjustment,
        intervals,
        replicates: summaries,
        pivots,
        floored: scale.floored,
    })
}
