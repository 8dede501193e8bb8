use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::{HiddenPreset, PipelineConfig, Source};
use super::manifest::{GridPoint, RunManifest, RunStatus, SplitSummary, Stopwatch};
use super::run::{self, load_dataset, select_tag, Evaluation, Relevance, TrainedRun};
use super::{PipelineError, Result, StageExt};
use crate::data::{self, Dataset, Label, ModelTag, SplitSpec};
use crate::index::{self, FlatIndex, SearchHitList};
use crate::metrics::{write_roc_csv, EvalReport};
use crate::nn::{self, EpochStats, History};
use crate::preprocess::{self, ScalerParams};
use crate::rng::{self, Stream};

pub const INDEX_FILE: &str = "index.nxidx";
pub const SCALER_FILE: &str = "scaler.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const FEATURES_FILE: &str = "train_features.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const ROC_FILE: &str = "roc.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PipelineError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Per-tag label counts, shaped like a dataset statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub source: String,
    pub dim: usize,
    pub total: usize,
    pub fake: usize,
    pub real: usize,
    pub by_model: BTreeMap<ModelTag, TagCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub total: usize,
    pub fake: usize,
    pub real: usize,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24}{:>10}{:>10}{:>10}", "Dataset", "Total", "Fake", "Real")?;
        writeln!(f, "{:<24}{:>10}{:>10}{:>10}", self.source, self.total, self.fake, self.real)?;
        if self.by_model.len() > 1 {
            for (tag, c) in &self.by_model {
                writeln!(f, "{:<24}{:>10}{:>10}{:>10}", format!("  {tag}"), c.total, c.fake, c.real)?;
            }
        }
        write!(f, "dim {}", self.dim)
    }
}

pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<IngestSummary> {
    cfg.validate()?;
    let (source, ds) = match cfg.source() {
        Source::Jsonl(path) => {
            let name = path
                .file_stem()
                .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
            (name, data::load_jsonl_path(&path).stage("ingest")?)
        }
        Source::Synthetic { .. } => ("synthetic".to_owned(), load_dataset(cfg)?),
    };
    let ds = match cfg.model_tag {
        Some(tag) => ds.filter_tag(tag),
        None => ds,
    };
    let by_model = ds
        .tag_counts()
        .into_iter()
        .map(|(tag, (total, fake, real))| (tag, TagCounts { total, fake, real }))
        .collect();
    Ok(IngestSummary {
        source,
        dim: ds.dim(),
        total: ds.len(),
        fake: ds.count(Label::Fake),
        real: ds.count(Label::Real),
        by_model,
    })
}

/// A finished training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub trained: TrainedRun,
}

const GRID_LEARNING_RATES: [f64; 2] = [0.01, 0.05];
const GRID_BATCH_SIZES: [usize; 2] = [16, 32];
const GRID_HIDDEN: [HiddenPreset; 2] = [HiddenPreset::Wide, HiddenPreset::Narrow];

/// Tries every grid point on a validation carve-out of `train` and returns
/// the config with the best validation accuracy (AUC breaks ties, then grid
/// order).
pub fn grid_search(cfg: &PipelineConfig, train: &Dataset) -> Result<(PipelineConfig, Vec<GridPoint>)> {
    let carve = SplitSpec {
        train_fraction: 0.8,
        seed: rng::stream(cfg.seed, Stream::Grid).next_u64(),
        stratified: true,
    };
    let (fit_part, val_part) = data::split(train, &carve).stage("grid")?;
    let relevance = Relevance::nearest_centroid(&fit_part)?;
    let mut points = Vec::new();
    let mut best: Option<(f64, f64, PipelineConfig)> = None;
    for &learning_rate in &GRID_LEARNING_RATES {
        for &batch_size in &GRID_BATCH_SIZES {
            for &hidden in &GRID_HIDDEN {
                let candidate = PipelineConfig {
                    learning_rate,
                    batch_size,
                    hidden,
                    ..cfg.clone()
                };
                let fitted = TrainedRun::fit(&candidate, &fit_part)?;
                let eval = fitted.evaluate(val_part.records(), &relevance, &[])?;
                let (acc, auc) = (eval.report.accuracy, eval.report.auc);
                points.push(GridPoint {
                    learning_rate,
                    batch_size,
                    hidden,
                    validation_accuracy: acc,
                    validation_auc: auc,
                });
                let key = (acc, auc.unwrap_or(0.0));
                if best.as_ref().is_none_or(|(a, u, _)| key > (*a, *u)) {
                    best = Some((key.0, key.1, candidate));
                }
            }
        }
    }
    let (_, _, chosen) = best.expect("grid is non-empty");
    Ok((chosen, points))
}

/// Splits the configured dataset the way every command sees it.
pub fn split_dataset(cfg: &PipelineConfig) -> Result<(Dataset, Dataset)> {
    let ds = load_dataset(cfg)?;
    data::split(&ds, &cfg.split_spec()).stage("split")
}

pub fn cmd_train(cfg: &PipelineConfig, grid: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    let mut clock = Stopwatch::default();
    let mut manifest = RunManifest::new(cfg)?;
    manifest.write(&dir)?;

    let (train, test) = split_dataset(cfg)?;
    manifest.split = Some(SplitSummary::new(&train, &test));
    // nothing below this line may look at `test`
    drop(test);
    clock.lap("load_and_split");

    let effective = if grid {
        let (chosen, points) = grid_search(cfg, &train)?;
        manifest.grid = points;
        clock.lap("grid");
        chosen
    } else {
        cfg.clone()
    };
    manifest.config = effective.clone();
    manifest.write(&dir)?;

    let trained = TrainedRun::fit(&effective, &train)?;
    clock.lap("fit");

    index::save_index(&trained.index, dir.join(INDEX_FILE)).stage("save")?;
    write_json(&dir.join(SCALER_FILE), &trained.scaler)?;
    nn::save_checkpoint(&trained.model, dir.join(MODEL_FILE)).stage("save")?;
    let mut out = create(&dir.join(HISTORY_FILE))?;
    trained.history.write_csv(&mut out)?;
    out.flush()?;
    let mut out = create(&dir.join(FEATURES_FILE))?;
    preprocess::write_features_csv(
        &mut out,
        &trained.train_features,
        &train.labels(),
        effective.k,
        effective.include_cosines,
    )
    .stage("save")?;
    out.flush()?;
    clock.lap("save");

    for name in [INDEX_FILE, SCALER_FILE, MODEL_FILE, HISTORY_FILE, FEATURES_FILE] {
        manifest.record_artifact(&dir, name)?;
    }
    manifest.timings = clock.timings;
    manifest.status = RunStatus::Complete;
    manifest.write(&dir)?;
    Ok(TrainOutcome {
        run_dir: dir,
        manifest,
        trained,
    })
}

/// Which records `cmd_evaluate` scores.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalTarget {
    /// The held-out split, re-derived from the manifest.
    Test,
    /// The training split, for sanity checks.
    Train,
    /// Every record of an external JSONL file (after the run's tag filter).
    External(PathBuf),
}

impl EvalTarget {
    fn suffix(&self) -> &'static str {
        match self {
            Self::Test => "",
            Self::Train => "_train",
            Self::External(_) => "_external",
        }
    }
}

/// Loaded artifacts of a training run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub manifest: RunManifest,
    pub index: FlatIndex,
    pub scaler: ScalerParams,
    pub model: nn::ClassifierModel,
}

impl RunArtifacts {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::read(dir)?;
        if manifest.status != RunStatus::Complete {
            return Err(PipelineError::ArtifactMismatch(format!(
                "run in {} did not complete",
                dir.display()
            )));
        }
        let index_path = dir.join(INDEX_FILE);
        let model_path = dir.join(MODEL_FILE);
        for p in [&index_path, &model_path] {
            if !p.is_file() {
                return Err(PipelineError::MissingArtifact(p.clone()));
            }
        }
        let index = index::load_index(&index_path).stage("load")?;
        let scaler: ScalerParams = read_json(&dir.join(SCALER_FILE))?;
        let model = nn::load_checkpoint(&model_path).stage("load")?;
        let a = Self {
            manifest,
            index,
            scaler,
            model,
        };
        a.check()?;
        Ok(a)
    }

    fn check(&self) -> Result<()> {
        let cfg = &self.manifest.config;
        let mismatch = |m: String| Err(PipelineError::ArtifactMismatch(m));
        if self.model.k != cfg.k {
            return mismatch(format!("checkpoint k {} but config k {}", self.model.k, cfg.k));
        }
        if self.model.input_width() != self.scaler.width() {
            return mismatch(format!(
                "checkpoint expects {} features but the scaler has {}",
                self.model.input_width(),
                self.scaler.width()
            ));
        }
        if let Some(att) = &self.model.attention {
            if att.dim() != self.index.dim() {
                return mismatch(format!("attention width {} but index dim {}", att.dim(), self.index.dim()));
            }
        }
        if let Some(split) = &self.manifest.split {
            if split.dim != self.index.dim() {
                return mismatch(format!("index dim {} but training dim {}", self.index.dim(), split.dim));
            }
        }
        Ok(())
    }
}

pub fn cmd_evaluate(run_dir: &Path, target: &EvalTarget) -> Result<Evaluation> {
    let art = RunArtifacts::load(run_dir)?;
    let cfg = &art.manifest.config;
    art.manifest.verify_inputs()?;
    let (train, test) = split_dataset(cfg)?;
    let records = match target {
        EvalTarget::Test => test,
        EvalTarget::Train => train.clone(),
        EvalTarget::External(path) => {
            let ds = data::load_jsonl_path(path).stage("ingest")?;
            if ds.dim() != art.index.dim() {
                return Err(PipelineError::ArtifactMismatch(format!(
                    "{} has dim {} but the index has dim {}",
                    path.display(),
                    ds.dim(),
                    art.index.dim()
                )));
            }
            let tag = art.manifest.split.as_ref().map(|s| s.model_tag);
            let pinned = PipelineConfig {
                model_tag: cfg.model_tag.or(tag),
                ..cfg.clone()
            };
            select_tag(ds, &pinned).map_err(|e| PipelineError::ArtifactMismatch(e.to_string()))?
        }
    };
    let relevance = Relevance::from_config(cfg, &train)?;
    let eval = run::evaluate(
        &art.index,
        &art.scaler,
        &art.model,
        records.records(),
        &relevance,
        &cfg.ranking_cutoffs,
    )?;
    let suffix = target.suffix();
    write_json(&run_dir.join(format!("metrics{suffix}.json")), &eval.report)?;
    if let Some(roc) = &eval.roc {
        let path = run_dir.join(format!("roc{suffix}.csv"));
        let mut out = create(&path)?;
        write_roc_csv(roc, &mut out)?;
        out.flush()?;
    }
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchQuery {
    Vector(Vec<f32>),
    /// An id stored in the index; its own vector is the query.
    Id(String),
}

/// Top-`k` search against a saved index. With `exclude_self`, an id query
/// never returns itself.
pub fn cmd_search(index_path: &Path, query: &SearchQuery, k: usize, exclude_self: bool) -> Result<SearchHitList> {
    if !index_path.is_file() {
        return Err(PipelineError::MissingArtifact(index_path.to_owned()));
    }
    let index = index::load_index(index_path).stage("load")?;
    let (vector, id) = match query {
        SearchQuery::Vector(v) => (v.clone(), None),
        SearchQuery::Id(id) => {
            let v = index
                .get(id)
                .ok_or_else(|| PipelineError::Config(format!("id {id} is not in the index")))?;
            (v.to_vec(), Some(id.as_str()))
        }
    };
    let exclude = if exclude_self { id } else { None };
    index.search(&vector, k, exclude).stage("search")
}

pub fn format_hits(hits: &SearchHitList) -> String {
    let mut s = String::from("rank\tid\tdistance\n");
    for (i, h) in hits.hits.iter().enumerate() {
        s.push_str(&format!("{}\t{}\t{}\n", i + 1, h.id, h.distance));
    }
    s
}

pub fn read_history(path: &Path) -> Result<History> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let bad = |line: usize| PipelineError::ArtifactMismatch(format!("{} line {line} is malformed", path.display()));
    let mut epochs = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad(i + 1));
        }
        epochs.push(EpochStats {
            epoch: f[0].parse().map_err(|_| bad(i + 1))?,
            loss: f[1].parse().map_err(|_| bad(i + 1))?,
            train_accuracy: f[2].parse().map_err(|_| bad(i + 1))?,
        });
    }
    Ok(History { epochs })
}

/// Everything about a run in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub final_epoch: Option<EpochStats>,
    pub epochs: usize,
    pub metrics: EvalReport,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let m = &self.manifest;
        let c = &m.config;
        let mut s = String::new();
        s.push_str(&format!("run seed {} (code version {})\n", m.seed, m.code_version));
        s.push_str(&format!(
            "variant {:?}, k {}, cosines {}, attention {}, hidden {:?}, dropout {}\n",
            c.variant,
            c.k,
            c.include_cosines,
            c.attention_enabled(),
            c.hidden.widths(),
            c.dropout_p()
        ));
        s.push_str(&format!(
            "sgd: learning rate {}, batch {}, {} epochs\n",
            c.learning_rate, c.batch_size, self.epochs
        ));
        if let Some(split) = &m.split {
            s.push_str(&format!(
                "split ({}, dim {}): train {} real / {} fake, test {} real / {} fake\n",
                split.model_tag, split.dim, split.train_real, split.train_fake, split.test_real, split.test_fake
            ));
        }
        if let Some(e) = &self.final_epoch {
            s.push_str(&format!(
                "final epoch {}: loss {:.4}, train accuracy {:.4}\n",
                e.epoch, e.loss, e.train_accuracy
            ));
        }
        s.push('\n');
        s.push_str(&self.metrics.to_table());
        s
    }
}

pub fn cmd_report(run_dir: &Path) -> Result<RunReport> {
    let manifest = RunManifest::read(run_dir)?;
    let history = read_history(&run_dir.join(HISTORY_FILE))?;
    let metrics: EvalReport = read_json(&run_dir.join(METRICS_FILE))?;
    let report = RunReport {
        manifest,
        final_epoch: history.last().copied(),
        epochs: history.epochs.len(),
        metrics,
    };
    write_json(&run_dir.join(REPORT_JSON), &report)?;
    std::fs::write(run_dir.join(REPORT_TEXT), report.to_text()).map_err(|e| PipelineError::io(run_dir, e))?;
    Ok(report)
}
