//! Layer sweeps, layer-strategy evaluation and the persisted experiment
//! runner behind the `sdelab` CLI.

mod config;
mod report;
mod runner;
mod selection;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{
    ExperimentConfig, ModelSpec, PolicyConfig, PolicyKind, ToySpec, ENV_OUT_DIR, ENV_THREADS,
};
pub use report::{load_records, write_report, ReportFiles};
pub use runner::{
    answer_policy, evaluate_strategy, execute, fixture_corpus, fixture_questions, load_manifest,
    rerun_manifest, run_experiment, run_question, run_sweep, sweep_layers, LabAssets, RecordIndex,
    RunManifest, SweepReport, FIXTURE_CORPUS, FIXTURE_QUESTIONS,
};
pub use selection::{
    compare_rows, layer_count, rank_and_select, rank_layers, strategy_layers, LayerScore,
    LayerScoreTable, LayerSelection, LayerStrategy, RankKey,
};

use crate::environment::EnvError;
use crate::evalkit::EvalError;
use crate::model::ModelError;
use crate::orchestration::OrchestrationError;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("missing asset {}", .0.display())]
    MissingAsset(PathBuf),
    #[error("manifest does not match the current assets: {0}")]
    Mismatch(String),
    #[error("report: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Orchestration(#[from] OrchestrationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl LabError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn json(path: &Path, source: serde_json::Error) -> Self {
        LabError::Json {
            path: path.to_path_buf(),
            source,
        }
    }
}
