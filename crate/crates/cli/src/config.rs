use std::path::PathBuf;

use fhcal_core::calibration::CalibrationConfig;
use fhcal_core::harness::{SimStudyConfig, TruthSource, WorkflowConfig};
use fhcal_core::{
    AdviConfig, EstimatorConfig, FhTruthConfig, FhvTruthConfig, GibbsConfig, HyperPriorSpec, ModelKind, ModelSpec,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    Vb,
    Gibbs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyBlock {
    pub domains: usize,
    pub simulations: usize,
    /// Replicates per simulation dataset for `study`.
    pub replicates: usize,
    pub truth_source: TruthSource,
    pub max_failed_simulations: usize,
    pub fh_truth: FhTruthConfig,
    pub fhv_truth: FhvTruthConfig,
}

impl Default for StudyBlock {
    fn default() -> Self {
        StudyBlock {
            domains: 150,
            simulations: 100,
            replicates: 200,
            truth_source: TruthSource::Generative,
            max_failed_simulations: 0,
            fh_truth: FhTruthConfig::default(),
            fhv_truth: FhvTruthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowBlock {
    pub months: usize,
    pub tests: usize,
    /// Replicates per month.
    pub replicates: usize,
}

impl Default for WorkflowBlock {
    fn default() -> Self {
        WorkflowBlock {
            months: 3,
            tests: 100,
            replicates: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoBlock {
    pub output_dir: PathBuf,
    /// Store posterior draws in `fit.json` (needed by `calibrate` and `ppc`
    /// without `--refit`).
    pub emit_draws: bool,
    pub ppc_draws: usize,
}

impl Default for IoBlock {
    fn default() -> Self {
        IoBlock {
            output_dir: PathBuf::from("out"),
            emit_draws: true,
            ppc_draws: 16,
        }
    }
}

/// Everything a command needs; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub model: ModelKind,
    pub estimator: EstimatorChoice,
    pub dataset: Option<PathBuf>,
    pub hyper: HyperPriorSpec,
    pub vb: AdviConfig,
    pub gibbs: GibbsConfig,
    pub calibration: CalibrationConfig,
    pub study: StudyBlock,
    pub workflow: WorkflowBlock,
    pub io: IoBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            workers: 1,
            model: ModelKind::Fh,
            estimator: EstimatorChoice::Vb,
            dataset: None,
            hyper: HyperPriorSpec::default(),
            vb: AdviConfig::default(),
            gibbs: GibbsConfig::default(),
            calibration: CalibrationConfig::default(),
            study: StudyBlock::default(),
            workflow: WorkflowBlock::default(),
            io: IoBlock::default(),
        }
    }
}

impl RunConfig {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.model, self.hyper.clone())
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        match self.estimator {
            EstimatorChoice::Vb => EstimatorConfig::Vb(self.vb.clone()),
            EstimatorChoice::Gibbs => EstimatorConfig::Gibbs(self.gibbs.clone()),
        }
    }

    pub fn calibration_config(&self) -> CalibrationConfig {
        CalibrationConfig {
            workers: self.workers,
            ..self.calibration.clone()
        }
    }

    pub fn study_config(&self, replicates: usize) -> SimStudyConfig {
        SimStudyConfig {
            model: self.model,
            n_domains: self.study.domains,
            simulations: self.study.simulations,
            truth_source: self.study.truth_source,
            fh_truth: self.study.fh_truth.clone(),
            fhv_truth: self.study.fhv_truth.clone(),
            hyper: self.hyper.clone(),
            estimator: self.estimator_config(),
            calibration: CalibrationConfig {
                replicates,
                ..self.calibration_config()
            },
            max_failed_simulations: self.study.max_failed_simulations,
            seed: self.seed,
            workers: self.workers,
        }
    }

    pub fn workflow_config(&self) -> WorkflowConfig {
        WorkflowConfig {
            study: self.study_config(self.workflow.replicates),
            months: self.workflow.months,
            tests: self.workflow.tests,
        }
    }

    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }
}
