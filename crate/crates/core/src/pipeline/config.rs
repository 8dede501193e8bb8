//! The run configuration file.
//!
//! A flat TOML document. Every key is optional except where noted; unknown
//! keys are rejected.
//!
//! ```toml
//! schema_version = 1
//! # dataset = "data/bert.jsonl"     # omit to use the synthetic source
//! synthetic_n_real = 500
//! synthetic_n_fake = 500
//! synthetic_dim = 32
//! synthetic_separation = 2.0
//! variant = "model2"
//! k = 5
//! include_cosines = true
//! seed = 42
//! out_dir = "runs/synthetic"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::data::{ModelTag, SplitSpec};
use crate::nn::{ModelSpec, TrainConfig, Variant, NARROW, WIDE};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenPreset {
    /// 128 → 64
    Wide,
    /// 64 → 32
    Narrow,
}

impl HiddenPreset {
    pub fn widths(self) -> [usize; 2] {
        match self {
            Self::Wide => WIDE,
            Self::Narrow => NARROW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceRule {
    /// A retrieved real article is relevant to a query when both fall in the
    /// same class cluster, each point being assigned to the nearer of the two
    /// training-set class centroids.
    NearestCentroid,
    /// Explicit `query_id,relevant_id` pairs from `relevance_file`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub dataset: Option<PathBuf>,
    pub synthetic_n_real: Option<usize>,
    pub synthetic_n_fake: Option<usize>,
    pub synthetic_dim: Option<usize>,
    pub synthetic_separation: Option<f64>,
    pub model_tag: Option<ModelTag>,
    pub variant: Variant,
    pub k: usize,
    pub include_cosines: bool,
    /// Defaults to on for ModelII, and must be off for ModelI.
    pub attention: Option<bool>,
    pub train_fraction: f64,
    pub stratified: bool,
    pub scale_features: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: HiddenPreset,
    /// Defaults to 0.5 for ModelII and 0 for ModelI.
    pub dropout: Option<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub relevance: RelevanceRule,
    pub relevance_file: Option<PathBuf>,
    pub ranking_cutoffs: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dataset: None,
            synthetic_n_real: None,
            synthetic_n_fake: None,
            synthetic_dim: None,
            synthetic_separation: None,
            model_tag: None,
            variant: Variant::ModelII,
            k: 5,
            include_cosines: false,
            attention: None,
            train_fraction: 0.8,
            stratified: true,
            scale_features: true,
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 32,
            hidden: HiddenPreset::Wide,
            dropout: None,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            relevance: RelevanceRule::NearestCentroid,
            relevance_file: None,
            ranking_cutoffs: vec![10, 100],
        }
    }
}

/// Where records come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Jsonl(PathBuf),
    Synthetic {
        n_real: usize,
        n_fake: usize,
        dim: usize,
        separation: f64,
    },
}

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    /// A synthetic-data config with the given class sizes and geometry.
    pub fn synthetic(n_real: usize, n_fake: usize, dim: usize, separation: f64) -> Self {
        Self {
            synthetic_n_real: Some(n_real),
            synthetic_n_fake: Some(n_fake),
            synthetic_dim: Some(dim),
            synthetic_separation: Some(separation),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative paths inside it, including
    /// `out_dir`, are resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.relevance_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn source(&self) -> Source {
        match &self.dataset {
            Some(p) => Source::Jsonl(p.clone()),
            None => Source::Synthetic {
                n_real: self.synthetic_n_real.unwrap_or(500),
                n_fake: self.synthetic_n_fake.unwrap_or(500),
                dim: self.synthetic_dim.unwrap_or(32),
                separation: self.synthetic_separation.unwrap_or(2.0),
            },
        }
    }

    pub fn attention_enabled(&self) -> bool {
        self.attention.unwrap_or(self.variant == Variant::ModelII)
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout.unwrap_or(match self.variant {
            Variant::ModelI => 0.0,
            Variant::ModelII => 0.5,
        })
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            seed: self.seed,
            stratified: self.stratified,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    /// The model architecture for embeddings of width `dim`.
    pub fn model_spec(&self, dim: usize) -> ModelSpec {
        let base = match self.variant {
            Variant::ModelI => ModelSpec::model_i(self.k, self.include_cosines),
            Variant::ModelII => ModelSpec::model_ii(self.k, self.include_cosines, self.attention_enabled().then_some(dim)),
        };
        base.with_hidden(self.hidden.widths()).with_dropout(self.dropout_p())
    }

    /// Checks everything that can be checked without reading the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.dataset.is_some()
            && (self.synthetic_n_real.is_some()
                || self.synthetic_n_fake.is_some()
                || self.synthetic_dim.is_some()
                || self.synthetic_separation.is_some())
        {
            return Err(bad("dataset and synthetic_* keys are mutually exclusive"));
        }
        if let Some(p) = &self.dataset {
            if !p.is_file() {
                return Err(bad(format!("dataset {} does not exist", p.display())));
            }
        }
        if self.k == 0 {
            return Err(bad("k must be at least 1"));
        }
        if self.variant == Variant::ModelI {
            if self.attention == Some(true) {
                return Err(bad("ModelI has no attention layer"));
            }
            if self.dropout.is_some_and(|p| p != 0.0) {
                return Err(bad("ModelI has no dropout"));
            }
        }
        self.split_spec().validate()?;
        self.train_config().validate()?;
        self.model_spec(1).validate()?;
        if self.ranking_cutoffs.contains(&0) {
            return Err(bad("ranking cutoffs must be at least 1"));
        }
        match (self.relevance, &self.relevance_file) {
            (RelevanceRule::File, None) => return Err(bad("relevance = \"file\" needs relevance_file")),
            (RelevanceRule::File, Some(p)) if !p.is_file() => {
                return Err(bad(format!("relevance_file {} does not exist", p.display())))
            }
            (RelevanceRule::NearestCentroid, Some(_)) => {
                return Err(bad("relevance_file is only used with relevance = \"file\""))
            }
            _ => {}
        }
        Ok(())
    }
}
