//! Monte Carlo coverage experiments, the averaged-adjustment production
//! workflow and posterior predictive check exports.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    apply_adjustment, calibrate, CalibratedIntervals, CalibrationAdjustment, CalibrationConfig, Interval,
};
use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimatorConfig};
use crate::fit::PosteriorFit;
use crate::model::{
    posterior_predictive_draw, simulate_fh, simulate_fhv, simulate_fhv_like, Dataset, FhTruthConfig,
    FhvTruthConfig, HyperPriorSpec, ModelKind, ModelSpec, ParamVector,
};
use crate::parallel::{derive_seed, par_map, rng_from_seed, stream};
use crate::quantile::{quantile_sorted, sort_values, QuantileTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Original,
    Rescaled,
    Pivotal,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Original, Method::Rescaled, Method::Pivotal];

    pub fn name(self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::Rescaled => "rescaled",
            Method::Pivotal => "pivotal",
        }
    }

    fn pick(self, iv: &CalibratedIntervals) -> &[Interval] {
        match self {
            Method::Original => &iv.original,
            Method::Rescaled => &iv.rescaled,
            Method::Pivotal => &iv.pivotal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSource {
    /// Fresh truths from the synthetic generative process for every dataset.
    Generative,
    /// Truths drawn (without replacement) from the posterior of one
    /// initial fit, with datasets from its posterior predictive.
    PosteriorOfInitialFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimStudyConfig {
    pub model: ModelKind,
    pub n_domains: usize,
    /// Number of simulation datasets `S`.
    pub simulations: usize,
    pub truth_source: TruthSource,
    pub fh_truth: FhTruthConfig,
    pub fhv_truth: FhvTruthConfig,
    pub hyper: HyperPriorSpec,
    pub estimator: EstimatorConfig,
    /// Replicates `A`, `γ` and interval flags.
    pub calibration: CalibrationConfig,
    /// Failed simulations tolerated before the study is marked aborted.
    pub max_failed_simulations: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        SimStudyConfig {
            model: ModelKind::Fh,
            n_domains: 150,
            simulations: 100,
            truth_source: TruthSource::Generative,
            fh_truth: FhTruthConfig::default(),
            fhv_truth: FhvTruthConfig::default(),
            hyper: HyperPriorSpec::default(),
            estimator: EstimatorConfig::default(),
            calibration: CalibrationConfig {
                replicates: 200,
                ..CalibrationConfig::default()
            },
            max_failed_simulations: 0,
            seed: 1,
            workers: 1,
        }
    }
}

impl SimStudyConfig {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.model, self.hyper.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.simulations < 1 {
            return Err(Error::Argument("a study needs at least one simulation".into()));
        }
        if self.n_domains < 1 {
            return Err(Error::Argument("a study needs at least one domain".into()));
        }
        self.calibration.validate()
    }

    fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            workers: self.workers,
            ..self.calibration.clone()
        }
    }

    fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(ParamVector, Dataset)> {
        match self.model {
            ModelKind::Fh => simulate_fh(&self.fh_truth, self.n_domains, rng).map(|(p, d)| (ParamVector::Fh(p), d)),
            ModelKind::Fhv => {
                simulate_fhv(&self.fhv_truth, self.n_domains, rng).map(|(p, d)| (ParamVector::Fhv(p), d))
            }
        }
    }
}

/// Per-method hit counts and summed lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageTally {
    domain_ids: Vec<usize>,
    counts: Vec<u32>,
    hits: [Vec<u64>; 3],
    lengths: [Vec<f64>; 3],
    c_sum: Vec<f64>,
    runs: usize,
}

impl CoverageTally {
    pub fn new(domain_ids: Vec<usize>, counts: Vec<u32>) -> Self {
        let n = domain_ids.len();
        CoverageTally {
            domain_ids,
            counts,
            hits: [vec![0; n], vec![0; n], vec![0; n]],
            lengths: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            c_sum: vec![0.0; n],
            runs: 0,
        }
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    /// Adds one run's intervals for `method`; call [`CoverageTally::finish_run`]
    /// once all methods of the run have been recorded.
    pub fn record(&mut self, method: Method, intervals: &[Interval], truth: &[f64]) -> Result<()> {
        let n = self.domain_ids.len();
        if intervals.len() != n || truth.len() != n {
            return Err(Error::dim("coverage inputs", n, intervals.len().min(truth.len())));
        }
        let k = method as usize;
        for i in 0..n {
            if intervals[i].covers(truth[i]) {
                self.hits[k][i] += 1;
            }
            self.lengths[k][i] += intervals[i].length();
        }
        Ok(())
    }

    pub fn finish_run(&mut self, c: Option<&[f64]>) {
        if let Some(c) = c {
            for (acc, x) in self.c_sum.iter_mut().zip(c) {
                *acc += x;
            }
        }
        self.runs += 1;
    }

    pub fn record_calibrated(&mut self, intervals: &CalibratedIntervals, c: &[f64], truth: &[f64]) -> Result<()> {
        for m in Method::ALL {
            self.record(m, m.pick(intervals), truth)?;
        }
        self.finish_run(Some(c));
        Ok(())
    }

    pub fn merge(&mut self, other: &CoverageTally) -> Result<()> {
        if other.domain_ids != self.domain_ids {
            return Err(Error::Argument("cannot merge tallies over different domains".into()));
        }
        for k in 0..3 {
            for i in 0..self.domain_ids.len() {
                self.hits[k][i] += other.hits[k][i];
                self.lengths[k][i] += other.lengths[k][i];
            }
        }
        for (a, b) in self.c_sum.iter_mut().zip(&other.c_sum) {
            *a += b;
        }
        self.runs += other.runs;
        Ok(())
    }

    pub fn report(&self) -> CoverageReport {
        let runs = self.runs.max(1) as f64;
        let methods = Method::ALL
            .iter()
            .map(|&m| {
                let k = m as usize;
                let domains: Vec<DomainCoverage> = (0..self.domain_ids.len())
                    .map(|i| DomainCoverage {
                        domain_id: self.domain_ids[i],
                        n: self.counts[i],
                        coverage: self.hits[k][i] as f64 / runs,
                        mean_length: self.lengths[k][i] / runs,
                    })
                    .collect();
                let nd = domains.len() as f64;
                MethodCoverage {
                    method: m,
                    coverage: domains.iter().map(|d| d.coverage).sum::<f64>() / nd,
                    mean_length: domains.iter().map(|d| d.mean_length).sum::<f64>() / nd,
                    domains,
                }
            })
            .collect();
        CoverageReport {
            runs: self.runs,
            methods,
            mean_c: self.c_sum.iter().map(|c| c / runs).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainCoverage {
    pub domain_id: usize,
    pub n: u32,
    pub coverage: f64,
    pub mean_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodCoverage {
    pub method: Method,
    /// Mean of the per-domain coverages.
    pub coverage: f64,
    pub mean_length: f64,
    pub domains: Vec<DomainCoverage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub runs: usize,
    pub methods: Vec<MethodCoverage>,
    /// Per-domain scale adjustment averaged over runs.
    pub mean_c: Vec<f64>,
}

impl CoverageReport {
    pub fn method(&self, m: Method) -> &MethodCoverage {
        &self.methods[m as usize]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyOutcome {
    pub report: CoverageReport,
    /// `(s, reason)` for simulations that failed.
    pub failures: Vec<(usize, String)>,
    /// Set when more simulations failed than tolerated; the report then
    /// covers the successful simulations only.
    pub aborted: Option<String>,
}

struct SimulationResult {
    truth: Vec<f64>,
    intervals: CalibratedIntervals,
    c: Vec<f64>,
}

fn fit_and_calibrate(
    spec: &ModelSpec,
    data: &Dataset,
    estimator: &EstimatorConfig,
    calibration: &CalibrationConfig,
    fit_seed: u64,
    calibrate_seed: u64,
) -> Result<(PosteriorFit, crate::calibration::CalibrationOutcome)> {
    let fit = estimator.estimate(spec, data, fit_seed)?;
    let outcome = calibrate(&fit, spec, data, estimator, calibration, calibrate_seed)?;
    Ok((fit, outcome))
}

/// Coverage study over `S` simulated datasets; each is fitted, calibrated
/// with `A` replicates and scored against its own truth.
pub fn run_study(config: &SimStudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    let spec = config.spec();
    let calibration = config.calibration();

    let cases: Vec<(ParamVector, Dataset)> = match config.truth_source {
        TruthSource::Generative => (0..config.simulations)
            .map(|s| {
                let mut rng = rng_from_seed(derive_seed(config.seed, stream::SIM_DATASET, s as u64 + 1));
                config.simulate(&mut rng)
            })
            .collect::<Result<_>>()?,
        TruthSource::PosteriorOfInitialFit => {
            let mut rng = rng_from_seed(derive_seed(config.seed, stream::SIM_DATASET, 0));
            let (_, initial) = config.simulate(&mut rng)?;
            let fit = config
                .estimator
                .estimate(&spec, &initial, derive_seed(config.seed, stream::SIM_FIT, 0))?;
            if fit.n_draws() < config.simulations {
                return Err(Error::Argument(format!(
                    "initial fit stores {} draws, fewer than {} simulations",
                    fit.n_draws(),
                    config.simulations
                )));
            }
            sample(&mut rng, fit.n_draws(), config.simulations)
                .into_iter()
                .map(|row| {
                    let truth = fit.param_draw(row)?;
                    let data = posterior_predictive_draw(&spec, &truth, &initial, &mut rng)?;
                    Ok((truth, data))
                })
                .collect::<Result<_>>()?
        }
    };

    let results = par_map(config.workers, &cases, |s, (truth, data)| {
        let index = s as u64 + 1;
        let res = fit_and_calibrate(
            &spec,
            data,
            &config.estimator,
            &calibration,
            derive_seed(config.seed, stream::SIM_FIT, index),
            derive_seed(config.seed, stream::SIM_CALIBRATE, index),
        )
        .map(|(_, outcome)| SimulationResult {
            truth: truth.theta().to_vec(),
            c: outcome.adjustment.c.clone(),
            intervals: outcome.intervals,
        });
        match &res {
            Ok(_) => eprintln!("study: simulation {}/{} done", s + 1, cases.len()),
            Err(e) => eprintln!("study: simulation {}/{} failed: {e}", s + 1, cases.len()),
        }
        res
    });

    let template = &cases[0].1;
    let counts = template.observations().iter().map(|o| o.n).collect();
    let mut tally = CoverageTally::new(template.domain_ids(), counts);
    let mut failures = Vec::new();
    for (s, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => tally.record_calibrated(&r.intervals, &r.c, &r.truth)?,
            Err(e) => failures.push((s + 1, e.to_string())),
        }
    }
    let aborted = (failures.len() > config.max_failed_simulations).then(|| {
        format!(
            "{} of {} simulations failed (tolerance {})",
            failures.len(),
            config.simulations,
            config.max_failed_simulations
        )
    });
    Ok(StudyOutcome {
        report: tally.report(),
        failures,
        aborted,
    })
}

/// The FH coverage study.
pub fn run_fh_study(config: &SimStudyConfig) -> Result<StudyOutcome> {
    if config.model != ModelKind::Fh {
        return Err(Error::Argument("run_fh_study expects an FH configuration".into()));
    }
    run_study(config)
}

/// Adjustments pooled over `M` months: arithmetic means of `a` and `c`,
/// and quantile-averaged pivot tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedAdjustment {
    pub adjustment: CalibrationAdjustment,
    pub months: usize,
}

pub fn average_adjustments(months: &[CalibrationAdjustment]) -> Result<AveragedAdjustment> {
    let first = months
        .first()
        .ok_or_else(|| Error::Argument("no adjustments to average".into()))?;
    let n = first.c.len();
    if let Some(bad) = months.iter().find(|m| m.c.len() != n || m.domain_ids != first.domain_ids) {
        return Err(Error::dim("month adjustment domains", n, bad.c.len()));
    }
    let m = months.len() as f64;
    let mean = |f: &dyn Fn(&CalibrationAdjustment) -> &[f64]| -> Vec<f64> {
        (0..n).map(|i| months.iter().map(|a| f(a)[i]).sum::<f64>() / m).collect()
    };
    let a = mean(&|x| &x.a);
    let c = mean(&|x| &x.c);
    let tables = (0..n)
        .map(|i| {
            let per_month: Vec<QuantileTable> = months.iter().map(|x| x.tables[i].clone()).collect();
            QuantileTable::average(&per_month)
        })
        .collect::<Result<_>>()?;
    Ok(AveragedAdjustment {
        adjustment: CalibrationAdjustment {
            domain_ids: first.domain_ids.clone(),
            a,
            c,
            tables,
            a_ok: months.iter().map(|x| x.a_ok).min().unwrap_or(0),
        },
        months: months.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    pub study: SimStudyConfig,
    /// Calibration runs ("months") whose adjustments are averaged.
    pub months: usize,
    /// Test datasets per month.
    pub tests: usize,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        let mut study = SimStudyConfig {
            model: ModelKind::Fhv,
            ..SimStudyConfig::default()
        };
        study.calibration.replicates = 100;
        WorkflowConfig {
            study,
            months: 3,
            tests: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkflowOutcome {
    pub month_adjustments: Vec<CalibrationAdjustment>,
    pub averaged: AveragedAdjustment,
    pub per_month: Vec<CoverageReport>,
    pub overall: CoverageReport,
    pub month_data: Vec<Dataset>,
}

/// Production workflow: per-month adjustments from `A` replicates, averaged
/// over months, then applied to `B` fresh test datasets per month drawn
/// from each month's posterior predictive.
pub fn run_production_workflow(config: &WorkflowConfig) -> Result<WorkflowOutcome> {
    let study = &config.study;
    study.validate()?;
    if config.months < 1 || config.tests < 1 {
        return Err(Error::Argument("workflow needs at least one month and one test dataset".into()));
    }
    let spec = study.spec();
    let calibration = study.calibration();

    // one panel of domains (covariates, counts) shared by every month
    let mut panel_rng = rng_from_seed(derive_seed(study.seed, stream::MONTH, 0));
    let (_, panel) = study.simulate(&mut panel_rng)?;
    let month_data: Vec<Dataset> = (1..=config.months)
        .map(|m| {
            let mut rng = rng_from_seed(derive_seed(study.seed, stream::MONTH, m as u64));
            match study.model {
                ModelKind::Fhv => simulate_fhv_like(&study.fhv_truth, &panel, &mut rng).map(|(_, d)| d),
                ModelKind::Fh => study.simulate(&mut rng).map(|(_, d)| d),
            }
        })
        .collect::<Result<_>>()?;

    let months: Vec<(PosteriorFit, CalibrationAdjustment)> = par_map(study.workers, &month_data, |k, data| {
        let m = k as u64 + 1;
        let month_seed = derive_seed(study.seed, stream::MONTH, m);
        let res = fit_and_calibrate(
            &spec,
            data,
            &study.estimator,
            &calibration,
            derive_seed(month_seed, stream::SIM_FIT, 0),
            derive_seed(month_seed, stream::SIM_CALIBRATE, 0),
        )
        .map(|(fit, outcome)| (fit, outcome.adjustment));
        eprintln!("workflow: month {m} calibrated");
        res
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let month_adjustments: Vec<CalibrationAdjustment> = months.iter().map(|(_, a)| a.clone()).collect();
    let averaged = average_adjustments(&month_adjustments)?;

    // test truths and datasets, generated serially per month
    let mut tests = Vec::with_capacity(config.months * config.tests);
    for (k, (fit, _)) in months.iter().enumerate() {
        let month_seed = derive_seed(study.seed, stream::MONTH, k as u64 + 1);
        let mut rng = rng_from_seed(derive_seed(month_seed, stream::TEST_DATASET, 0));
        let rows: Vec<usize> = if fit.n_draws() >= config.tests {
            sample(&mut rng, fit.n_draws(), config.tests).into_vec()
        } else {
            (0..config.tests).map(|_| rng.random_range(0..fit.n_draws())).collect()
        };
        for (b, row) in rows.into_iter().enumerate() {
            let truth = fit.param_draw(row)?;
            let data = posterior_predictive_draw(&spec, &truth, &month_data[k], &mut rng)?;
            tests.push((k, b, truth, data));
        }
    }

    let results = par_map(study.workers, &tests, |_, (k, b, truth, data)| {
        let month_seed = derive_seed(study.seed, stream::MONTH, *k as u64 + 1);
        let seed = derive_seed(month_seed, stream::TEST_DATASET, *b as u64 + 1);
        study
            .estimator
            .estimate(&spec, data, seed)
            .and_then(|fit| apply_adjustment(&fit, &data.domain_ids(), &averaged.adjustment, &calibration))
            .map(|iv| (*k, truth.theta().to_vec(), iv))
    });

    let counts: Vec<u32> = panel.observations().iter().map(|o| o.n).collect();
    let mut tallies: Vec<CoverageTally> = (0..config.months)
        .map(|_| CoverageTally::new(panel.domain_ids(), counts.clone()))
        .collect();
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok((k, truth, iv)) => tallies[k].record_calibrated(&iv, &averaged.adjustment.c, &truth)?,
            Err(e) => {
                log::warn!("workflow test fit failed: {e}");
                failed += 1;
            }
        }
    }
    if failed > study.max_failed_simulations {
        return Err(Error::FitFailure(format!("{failed} workflow test fits failed")));
    }
    let mut overall = CoverageTally::new(panel.domain_ids(), counts);
    for t in &tallies {
        overall.merge(t)?;
    }
    Ok(WorkflowOutcome {
        month_adjustments,
        averaged,
        per_month: tallies.iter().map(|t| t.report()).collect(),
        overall: overall.report(),
        month_data,
    })
}

pub const PPC_PROBS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpcQuantileRow {
    /// `y` or `v`.
    pub statistic: String,
    pub prob: f64,
    pub observed: f64,
    pub replicate_mean: f64,
    pub replicate_q05: f64,
    pub replicate_q95: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpcExport {
    pub observed: Dataset,
    pub replicates: Vec<Dataset>,
    pub quantiles: Vec<PpcQuantileRow>,
}

/// Posterior predictive replicates and a cross-domain quantile comparison.
pub fn ppc_export<R: Rng + ?Sized>(
    fit: &PosteriorFit,
    spec: &ModelSpec,
    data: &Dataset,
    n_draws: usize,
    rng: &mut R,
) -> Result<PpcExport> {
    if n_draws < 1 {
        return Err(Error::Argument("ppc needs at least one replicate".into()));
    }
    let rows: Vec<usize> = if n_draws <= fit.n_draws() {
        sample(rng, fit.n_draws(), n_draws).into_vec()
    } else {
        (0..n_draws).map(|_| rng.random_range(0..fit.n_draws())).collect()
    };
    let replicates = rows
        .into_iter()
        .map(|r| posterior_predictive_draw(spec, &fit.param_draw(r)?, data, rng))
        .collect::<Result<Vec<_>>>()?;

    let sorted = |mut x: Vec<f64>| {
        sort_values(&mut x);
        x
    };
    let mut quantiles = Vec::new();
    for (name, get) in [("y", Dataset::y as fn(&Dataset) -> Vec<f64>), ("v", Dataset::v)] {
        let obs = sorted(get(data));
        let reps: Vec<Vec<f64>> = replicates.iter().map(|d| sorted(get(d))).collect();
        for p in PPC_PROBS {
            let rq = sorted(reps.iter().map(|r| quantile_sorted(r, p)).collect());
            quantiles.push(PpcQuantileRow {
                statistic: name.to_string(),
                prob: p,
                observed: quantile_sorted(&obs, p),
                replicate_mean: rq.iter().sum::<f64>() / rq.len() as f64,
                replicate_q05: quantile_sorted(&rq, 0.05),
                replicate_q95: quantile_sorted(&rq, 0.95),
            });
        }
    }
    Ok(PpcExport {
        observed: data.clone(),
        replicates,
        quantiles,
    })
}
