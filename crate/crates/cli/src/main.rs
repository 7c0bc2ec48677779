//! `fhcal`: fit, calibrate and study Fay-Herriot-family models.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use fhcal_core::artifact::{self, FitArtifact};
use fhcal_core::calibration::calibrate;
use fhcal_core::harness::{self, CoverageReport, TruthSource};
use fhcal_core::model::{simulate_fh, simulate_fhv};
use fhcal_core::parallel::{derive_seed, rng_from_seed, stream};
use fhcal_core::{Dataset, Error, Estimator, ModelKind, ParamVector};

use config::{EstimatorChoice, RunConfig};

#[derive(Parser)]
#[command(name = "fhcal", version, about = "Variational Fay-Herriot fits with bootstrap-calibrated intervals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a dataset and write `fit.json`.
    Fit(FitArgs),
    /// Bootstrap-calibrate a fit and write adjustments and intervals.
    Calibrate(CalibrateArgs),
    /// Monte Carlo coverage study on simulated datasets.
    Study(StudyArgs),
    /// Averaged-adjustment workflow over several months of test datasets.
    Workflow(WorkflowArgs),
    /// Posterior predictive replicate tables.
    Ppc(PpcArgs),
    /// Write a synthetic dataset and its true parameters.
    Simulate(SimulateArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum concurrent tasks; never changes results.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorChoice>,
    /// `fh` or `fhv`.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Output directory.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV (`domain_id, y, v, n, x_1.., z_1..`).
    #[arg(long, short = 'd')]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Leave posterior draws out of `fit.json`.
    #[arg(long)]
    no_draws: bool,
}

#[derive(Args)]
struct CalibrationFlags {
    /// Bootstrap replicates A.
    #[arg(long)]
    replicates: Option<usize>,
    /// Tail level; nominal coverage is 1 - 2 gamma.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    bias_correction: bool,
    #[arg(long)]
    strict_inversion: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    calibration: CalibrationFlags,
    /// Fit artifact to calibrate (default `<out>/fit.json`).
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Fit the dataset first instead of reading a fit artifact.
    #[arg(long)]
    refit: bool,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    calibration: CalibrationFlags,
    /// Simulation datasets S.
    #[arg(long)]
    simulations: Option<usize>,
    /// Domains N per dataset.
    #[arg(long)]
    domains: Option<usize>,
    #[arg(long, value_parser = parse_truth_source)]
    truth_source: Option<TruthSource>,
}

#[derive(Args)]
struct WorkflowArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    calibration: CalibrationFlags,
    /// Months M whose adjustments are averaged.
    #[arg(long)]
    months: Option<usize>,
    /// Test datasets B per month.
    #[arg(long)]
    tests: Option<usize>,
    #[arg(long)]
    domains: Option<usize>,
}

#[derive(Args)]
struct PpcArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Number of replicate tables.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long)]
    refit: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    domains: Option<usize>,
}

fn parse_truth_source(s: &str) -> Result<TruthSource, String> {
    match s {
        "generative" => Ok(TruthSource::Generative),
        "posterior_of_initial_fit" | "posterior" => Ok(TruthSource::PosteriorOfInitialFit),
        other => Err(format!("unknown truth source `{other}` (generative | posterior_of_initial_fit)")),
    }
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InsufficientReplicates { .. } => 4,
            Error::NonFinite { .. } | Error::FitFailure(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn config_failure(message: String) -> Failure {
    Failure {
        code: 2,
        kind: "config".into(),
        message,
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn load_config(common: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_failure(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| config_failure(format!("{}: {}", path.display(), e.message())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(e) = common.estimator {
        cfg.estimator = e;
    }
    if let Some(m) = common.model {
        cfg.model = m;
    }
    if let Some(o) = &common.out {
        cfg.io.output_dir = o.clone();
    }
    Ok(cfg)
}

fn apply_calibration_flags(cfg: &mut RunConfig, flags: &CalibrationFlags) -> Option<usize> {
    if let Some(g) = flags.gamma {
        cfg.calibration.gamma = g;
    }
    if flags.bias_correction {
        cfg.calibration.bias_correction = true;
    }
    if flags.strict_inversion {
        cfg.calibration.strict_inversion = true;
    }
    flags.replicates
}

fn write_echo(cfg: &RunConfig) -> CmdResult {
    let dir = &cfg.io.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Failure::from_io(dir, e))?;
    let text = cfg
        .to_toml()
        .map_err(|e| config_failure(format!("cannot serialize resolved config: {e}")))?;
    let path = dir.join("resolved_config.toml");
    std::fs::write(&path, text).map_err(|e| Failure::from_io(&path, e))
}

impl Failure {
    fn from_io(path: &Path, e: std::io::Error) -> Self {
        config_failure(format!("I/O error on {}: {e}", path.display()))
    }
}

fn load_dataset(cfg: &mut RunConfig, data: &DataArgs) -> std::result::Result<Dataset, Failure> {
    if let Some(d) = &data.data {
        cfg.dataset = Some(d.clone());
    }
    let path = cfg
        .dataset
        .clone()
        .ok_or_else(|| config_failure("no dataset given (use --data or `dataset` in the config)".into()))?;
    Ok(artifact::read_dataset_csv(&path)?)
}

fn fit_dataset(cfg: &RunConfig, data: &Dataset) -> std::result::Result<FitArtifact, Failure> {
    let estimator = cfg.estimator_config();
    let spec = cfg.spec();
    eprintln!("fit: {} model, {} estimator, {} domains", cfg.model, estimator_name(cfg), data.len());
    let fit = estimator.estimate(&spec, data, cfg.seed)?;
    eprintln!(
        "fit: {} iterations, converged = {}, {} draws",
        fit.iterations,
        fit.converged,
        fit.n_draws()
    );
    for note in &fit.notes {
        eprintln!("fit: note: {note}");
    }
    Ok(FitArtifact {
        model: spec,
        estimator,
        seed: cfg.seed,
        fit,
    })
}

fn estimator_name(cfg: &RunConfig) -> &'static str {
    match cfg.estimator {
        EstimatorChoice::Vb => "vb",
        EstimatorChoice::Gibbs => "gibbs",
    }
}

fn write_fit(cfg: &RunConfig, art: &FitArtifact) -> CmdResult {
    let dir = &cfg.io.output_dir;
    let stored = if cfg.io.emit_draws { art.clone() } else { art.without_draws() };
    artifact::write_json(&dir.join("fit.json"), &stored)?;
    let path = dir.join("summaries.csv");
    let mut text = String::from("name,mean,var\n");
    for s in &art.fit.summaries {
        text.push_str(&format!("{},{},{}\n", s.name, artifact::fmt_f64(s.mean), artifact::fmt_f64(s.var)));
    }
    std::fs::write(&path, text).map_err(|e| Failure::from_io(&path, e))
}

/// Fit artifact from `--fit`/`<out>/fit.json`, or a fresh fit with `--refit`.
fn obtain_fit(
    cfg: &mut RunConfig,
    data: &Dataset,
    fit_path: &Option<PathBuf>,
    refit: bool,
) -> std::result::Result<FitArtifact, Failure> {
    if refit {
        let art = fit_dataset(cfg, data)?;
        write_fit(cfg, &art)?;
        return Ok(art);
    }
    let path = fit_path.clone().unwrap_or_else(|| cfg.io.output_dir.join("fit.json"));
    let art: FitArtifact = artifact::read_json(&path)?;
    if art.fit.n_domains != data.len() {
        return Err(Error::Argument(format!(
            "fit {} covers {} domains but the dataset has {}",
            path.display(),
            art.fit.n_domains,
            data.len()
        ))
        .into());
    }
    // replicates are refitted with exactly the settings of the initial fit
    cfg.model = art.model.kind;
    cfg.hyper = art.model.hyper.clone();
    cfg.seed = art.seed;
    match &art.estimator {
        fhcal_core::EstimatorConfig::Vb(c) => {
            cfg.estimator = EstimatorChoice::Vb;
            cfg.vb = c.clone();
        }
        fhcal_core::EstimatorConfig::Gibbs(c) => {
            cfg.estimator = EstimatorChoice::Gibbs;
            cfg.gibbs = c.clone();
        }
    }
    Ok(art)
}

fn cmd_fit(args: &FitArgs) -> CmdResult {
    let mut cfg = load_config(&args.common)?;
    if args.no_draws {
        cfg.io.emit_draws = false;
    }
    let data = load_dataset(&mut cfg, &args.data)?;
    let art = fit_dataset(&cfg, &data)?;
    write_fit(&cfg, &art)?;
    write_echo(&cfg)
}

fn cmd_calibrate(args: &CalibrateArgs) -> CmdResult {
    let mut cfg = load_config(&args.common)?;
    if let Some(a) = apply_calibration_flags(&mut cfg, &args.calibration) {
        cfg.calibration.replicates = a;
    }
    let data = load_dataset(&mut cfg, &args.data)?;
    let art = obtain_fit(&mut cfg, &data, &args.fit, args.refit)?;
    if art.fit.n_draws() == 0 {
        return Err(Error::Argument("fit artifact stores no draws; refit with draws or pass --refit".into()).into());
    }
    let calibration = cfg.calibration_config();
    eprintln!(
        "calibrate: {} replicates, gamma = {}, {} workers",
        calibration.replicates, calibration.gamma, cfg.workers
    );
    let outcome = calibrate(&art.fit, &art.model, &data, &art.estimator, &calibration, cfg.seed)?;
    let dir = &cfg.io.output_dir;
    artifact::write_adjustments_csv(&dir.join("adjustments.csv"), &outcome.adjustment)?;
    artifact::write_pivot_quantiles_csv(&dir.join("pivot_quantiles.csv"), &outcome.adjustment)?;
    artifact::write_intervals_csv(&dir.join("intervals.csv"), &outcome.intervals)?;
    artifact::write_replicates_csv(&dir.join("replicates.csv"), &outcome.replicates)?;
    eprintln!(
        "calibrate: A_ok = {}, mean c = {:.4}, {} floored",
        outcome.adjustment.a_ok,
        outcome.adjustment.c.iter().sum::<f64>() / outcome.adjustment.c.len() as f64,
        outcome.floored.len()
    );
    write_echo(&cfg)
}

fn write_report(dir: &Path, report: &CoverageReport) -> CmdResult {
    artifact::write_coverage_by_domain_csv(&dir.join("coverage_by_domain.csv"), report)?;
    artifact::write_coverage_summary_csv(&dir.join("coverage_summary.csv"), report)?;
    Ok(())
}

fn print_summary(label: &str, report: &CoverageReport) {
    for m in &report.methods {
        eprintln!(
            "{label}: {:<8} coverage {:.4}  length {:.4}",
            m.method.name(),
            m.coverage,
            m.mean_length
        );
    }
}

fn cmd_study(args: &StudyArgs) -> CmdResult {
    let mut cfg = load_config(&args.common)?;
    if let Some(a) = apply_calibration_flags(&mut cfg, &args.calibration) {
        cfg.study.replicates = a;
    }
    if let Some(s) = args.simulations {
        cfg.study.simulations = s;
    }
    if let Some(n) = args.domains {
        cfg.study.domains = n;
    }
    if let Some(t) = args.truth_source {
        cfg.study.truth_source = t;
    }
    let study = cfg.study_config(cfg.study.replicates);
    let outcome = harness::run_study(&study)?;
    write_report(&cfg.io.output_dir, &outcome.report)?;
    if !outcome.failures.is_empty() {
        let path = cfg.io.output_dir.join("study_failures.csv");
        let mut text = String::from("simulation,reason\n");
        for (s, r) in &outcome.failures {
            text.push_str(&format!("{s},\"{}\"\n", r.replace('"', "'")));
        }
        std::fs::write(&path, text).map_err(|e| Failure::from_io(&path, e))?;
    }
    write_echo(&cfg)?;
    print_summary("study", &outcome.report);
    match outcome.aborted {
        Some(reason) => Err(Error::FitFailure(format!("study aborted, partial results saved: {reason}")).into()),
        None => Ok(()),
    }
}

fn cmd_workflow(args: &WorkflowArgs) -> CmdResult {
    let mut cfg = load_config(&args.common)?;
    if args.common.model.is_none() && args.common.config.is_none() {
        cfg.model = ModelKind::Fhv;
    }
    if let Some(a) = apply_calibration_flags(&mut cfg, &args.calibration) {
        cfg.workflow.replicates = a;
    }
    if let Some(m) = args.months {
        cfg.workflow.months = m;
    }
    if let Some(b) = args.tests {
        cfg.workflow.tests = b;
    }
    if let Some(n) = args.domains {
        cfg.study.domains = n;
    }
    let outcome = harness::run_production_workflow(&cfg.workflow_config())?;
    let dir = &cfg.io.output_dir;
    for (k, (adj, report)) in outcome.month_adjustments.iter().zip(&outcome.per_month).enumerate() {
        let month = dir.join(format!("month_{:02}", k + 1));
        artifact::write_dataset_csv(&month.join("dataset.csv"), &outcome.month_data[k])?;
        artifact::write_adjustments_csv(&month.join("adjustments.csv"), adj)?;
        artifact::write_pivot_quantiles_csv(&month.join("pivot_quantiles.csv"), adj)?;
        write_report(&month, report)?;
        print_summary(&format!("workflow month {}", k + 1), report);
    }
    let averaged = dir.join("averaged");
    artifact::write_adjustments_csv(&averaged.join("adjustments.csv"), &outcome.averaged.adjustment)?;
    artifact::write_pivot_quantiles_csv(&averaged.join("pivot_quantiles.csv"), &outcome.averaged.adjustment)?;
    write_report(dir, &outcome.overall)?;
    print_summary("workflow overall", &outcome.overall);
    write_echo(&cfg)
}

fn cmd_ppc(args: &PpcArgs) -> CmdResult {
    let mut cfg = load_config(&args.common)?;
    if let Some(d) = args.draws {
        cfg.io.ppc_draws = d;
    }
    let data = load_dataset(&mut cfg, &args.data)?;
    let art = obtain_fit(&mut cfg, &data, &args.fit, args.refit)?;
    if art.fit.n_draws() == 0 {
        return Err(Error::Argument("fit artifact stores no draws; refit with draws or pass --refit".into()).into());
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, stream::REPLICATE_DATA, u64::MAX));
    let ppc = harness::ppc_export(&art.fit, &art.model, &data, cfg.io.ppc_draws, &mut rng)?;
    artifact::write_ppc(&cfg.io.output_dir, &ppc)?;
    eprintln!("ppc: wrote {} replicate tables", ppc.replicates.len());
    write_echo(&cfg)
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.domains {
        cfg.study.domains = n;
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, stream::SIM_DATASET, 0));
    let (truth, data) = match cfg.model {
        ModelKind::Fh => simulate_fh(&cfg.study.fh_truth, cfg.study.domains, &mut rng)
            .map(|(p, d)| (ParamVector::Fh(p), d))?,
        ModelKind::Fhv => simulate_fhv(&cfg.study.fhv_truth, cfg.study.domains, &mut rng)
            .map(|(p, d)| (ParamVector::Fhv(p), d))?,
    };
    let dir = &cfg.io.output_dir;
    artifact::write_dataset_csv(&dir.join("dataset.csv"), &data)?;
    artifact::write_json(&dir.join("truth.json"), &truth)?;
    let path = dir.join("truth.csv");
    let mut text = String::from("domain_id,theta\n");
    for (id, t) in data.domain_ids().iter().zip(truth.theta()) {
        text.push_str(&format!("{id},{}\n", artifact::fmt_f64(*t)));
    }
    std::fs::write(&path, text).map_err(|e| Failure::from_io(&path, e))?;
    eprintln!("simulate: wrote {} {} domains to {}", data.len(), cfg.model, dir.display());
    write_echo(&cfg)
}

fn default_config_help() -> String {
    let text = RunConfig::default()
        .to_toml()
        .unwrap_or_else(|e| format!("<unavailable: {e}>"));
    format!("Default configuration (TOML, every key optional):\n\n{text}")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let matches = Cli::command().after_long_help(default_config_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Study(a) => cmd_study(a),
        Command::Workflow(a) => cmd_workflow(a),
        Command::Ppc(a) => cmd_ppc(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = f.message.replace('\n', " ");
            eprintln!("error kind={} exit={} message={message:?}", f.kind, f.code);
            ExitCode::from(f.code)
        }
    }
}
