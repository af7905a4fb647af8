//! Experiment specs, data and base-model preparation, end-to-end runs with
//! round checkpoints, reports and cross-run comparison.

mod prepare;
mod report;
mod run;
mod spec;

pub use prepare::{
    build_tokenizer, dataset_fingerprint, load_examples, prepare, pretrained_base, LoadedData, Prepared,
};
pub use report::{compare, read_report, summarize_artifacts, ArtifactSummary, Comparison, Report};
pub use run::{
    run, RunOptions, RunOutcome, AUDIT_FILE, BASE_FILE, METRICS_FILE, MODEL_FILE, REPORT_FILE, ROUNDS_DIR, SPEC_FILE,
    SPLIT_FILE,
};
pub use spec::{validate_config, DataSource, DataSpec, ExperimentSpec, Overrides, PretrainCorpus, PretrainSpec};

use std::path::Path;

use thiserror::Error;

use crate::data::DataError;
use crate::federation::FederationError;
use crate::model::{ModelError, Violation};
use crate::prompting::PromptError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid experiment spec:\n{}", list(.0))]
    Invalid(Vec<Violation>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("artifact {0}")]
    Artifact(String),
    #[error("reports come from different datasets: {first} vs {other} ({name})")]
    FingerprintMismatch { first: String, other: String, name: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Federation(#[from] FederationError),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n")
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}
