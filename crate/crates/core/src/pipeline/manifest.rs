use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::{PipelineError, Result};
use crate::data::{Dataset, Label, ModelTag};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub model_tag: ModelTag,
    pub dim: usize,
    pub train_real: usize,
    pub train_fake: usize,
    pub test_real: usize,
    pub test_fake: usize,
}

impl SplitSummary {
    pub fn new(train: &Dataset, test: &Dataset) -> Self {
        Self {
            model_tag: train
                .records()
                .first()
                .map_or(ModelTag::Synthetic, |r| r.model_tag),
            dim: train.dim(),
            train_real: train.count(Label::Real),
            train_fake: train.count(Label::Fake),
            test_real: test.count(Label::Real),
            test_fake: test.count(Label::Fake),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: super::HiddenPreset,
    pub validation_accuracy: f64,
    pub validation_auc: Option<f64>,
}

/// Provenance of one training run. Written when the run starts and rewritten
/// with timings and artifact digests when it completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub seed: u64,
    pub status: RunStatus,
    /// The effective config, including any grid-search choices.
    pub config: PipelineConfig,
    pub inputs: Vec<InputDigest>,
    pub split: Option<SplitSummary>,
    pub grid: Vec<GridPoint>,
    pub timings: Vec<StageTiming>,
    /// Artifact file name → SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(config: &PipelineConfig) -> Result<Self> {
        let mut inputs = Vec::new();
        for p in [&config.dataset, &config.relevance_file].into_iter().flatten() {
            inputs.push(InputDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            });
        }
        Ok(Self {
            code_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: config.seed,
            status: RunStatus::Running,
            config: config.clone(),
            inputs,
            split: None,
            grid: Vec::new(),
            timings: Vec::new(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| PipelineError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|source| PipelineError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    /// Fails if any recorded input file changed since the run.
    pub fn verify_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let now = sha256_file(Path::new(&input.path))?;
            if now != input.sha256 {
                return Err(PipelineError::ArtifactMismatch(format!(
                    "{} changed since training (sha256 {} → {})",
                    input.path, input.sha256, now
                )));
            }
        }
        Ok(())
    }

    pub fn record_artifact(&mut self, dir: &Path, name: &str) -> Result<()> {
        let digest = sha256_file(&dir.join(name))?;
        self.artifacts.insert(name.to_owned(), digest);
        Ok(())
    }
}

/// Wall-clock timer for named stages.
#[derive(Debug)]
pub struct Stopwatch {
    last: Instant,
    pub timings: Vec<StageTiming>,
}

impl Default for Stopwatch {
    fn default() -> Self {
        Self {
            last: Instant::now(),
            timings: Vec::new(),
        }
    }
}

impl Stopwatch {
    pub fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.to_owned(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}
