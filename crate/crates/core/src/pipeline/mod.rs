//! End-to-end runs: ingest → split → index → features → scale → train →
//! evaluate, plus the artifact files each stage leaves behind.
//!
//! A training run directory contains
//!
//! | file               | contents                                        |
//! |--------------------|-------------------------------------------------|
//! | `manifest.json`    | config snapshot, input digests, timings, seed   |
//! | `index.nxidx`      | training real-news embeddings (`NXIDX1`)        |
//! | `scaler.json`      | feature standardization parameters             |
//! | `model.ckpt`       | model checkpoint (`NXCKPT`)                     |
//! | `history.csv`      | `epoch,loss,train_accuracy`                     |
//! | `train_features.csv` | unscaled training features with labels        |
//!
//! and evaluation adds `metrics.json` and `roc.csv`.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod run;

pub use commands::{
    cmd_evaluate, cmd_ingest, cmd_report, cmd_search, cmd_train, EvalTarget, IngestSummary, RunArtifacts, RunReport, SearchQuery,
    TrainOutcome,
};
pub use config::{HiddenPreset, PipelineConfig, RelevanceRule, Source};
pub use manifest::RunManifest;
pub use run::{Evaluation, Relevance, TrainedRun};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::DataError;
use crate::index::IndexError;
use crate::metrics::MetricsError;
use crate::nn::NnError;
use crate::preprocess::PreprocessError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    UnlocatedIo(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<PipelineError>,
    },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            return Self::MissingArtifact(path.to_owned());
        }
        Self::Io {
            path: path.to_owned(),
            source,
        }
    }

    /// Process exit code for this error family.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Stage { source, .. } => source.exit_code(),
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Index(_) => 4,
            Self::Preprocess(_) | Self::Model(_) => 5,
            Self::Metrics(_) => 6,
            Self::MissingArtifact(_) | Self::ArtifactMismatch(_) | Self::Json { .. } => 7,
            Self::Io { .. } | Self::UnlocatedIo(_) => 8,
        }
    }

    /// The innermost error, with stage wrappers removed.
    pub fn root(&self) -> &PipelineError {
        match self {
            Self::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Tags errors with the pipeline stage that produced them.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<PipelineError>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: Box::new(e.into()),
        })
    }
}
