//! In-memory training and evaluation, shared by the commands and the tests.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use super::config::{PipelineConfig, RelevanceRule, Source};
use super::{PipelineError, Result, StageExt};
use crate::data::{self, Dataset, EmbeddingRecord, Label};
use crate::index::{DenseVector, FlatIndex};
use crate::linalg::Matrix;
use crate::metrics::{self, classification_metrics, roc_auc, roc_curve, EvalReport, RankedList, RankingMetrics, RocPoint};
use crate::nn::{
    self, refine_rows, retrieval_features, score_embeddings, Batch, ClassifierModel, History, ReferenceSet, TrainingSet,
};
use crate::preprocess::{self, ScalerParams};
use crate::rng::{self, Stream};

/// Reads or generates the configured records and applies the tag filter.
pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let ds = match cfg.source() {
        Source::Jsonl(path) => data::load_jsonl_path(&path).stage("ingest")?,
        Source::Synthetic {
            n_real,
            n_fake,
            dim,
            separation,
        } => data::synthesize(cfg.seed, n_real, n_fake, dim, separation).stage("ingest")?,
    };
    select_tag(ds, cfg)
}

pub(crate) fn select_tag(ds: Dataset, cfg: &PipelineConfig) -> Result<Dataset> {
    match cfg.model_tag {
        Some(tag) => {
            let out = ds.filter_tag(tag);
            if out.is_empty() {
                return Err(PipelineError::Config(format!("no records with model tag {tag}")));
            }
            Ok(out)
        }
        None => {
            let tags = ds.tag_counts();
            if tags.len() > 1 {
                let names: Vec<&str> = tags.keys().map(|t| t.as_str()).collect();
                return Err(PipelineError::Config(format!(
                    "dataset mixes model tags {}; set model_tag",
                    names.join(", ")
                )));
            }
            Ok(ds)
        }
    }
}

fn embeddings(records: &[EmbeddingRecord]) -> (Matrix, Vec<String>) {
    let dim = records.first().map_or(0, |r| r.vector.dim());
    let mut data = Vec::with_capacity(records.len() * dim);
    for r in records {
        data.extend(r.vector.as_slice().iter().map(|&v| f64::from(v)));
    }
    let ids = records.iter().map(|r| r.article_id.clone()).collect();
    (Matrix::from_vec(records.len(), dim, data), ids)
}

fn label_values(records: &[EmbeddingRecord]) -> Vec<f64> {
    records.iter().map(|r| r.label.as_f64()).collect()
}

/// Everything a trained run needs to score new articles.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub index: FlatIndex,
    pub scaler: ScalerParams,
    pub model: ClassifierModel,
    pub history: History,
    /// Unscaled training features as first extracted (before any attention
    /// training), one row per training record.
    pub train_features: Matrix,
}

impl TrainedRun {
    /// Indexes the training reals, extracts features, fits the scaler and
    /// trains the model. Only `train` is consulted.
    pub fn fit(cfg: &PipelineConfig, train: &Dataset) -> Result<Self> {
        let reals: Vec<(String, DenseVector)> = train
            .with_label(Label::Real)
            .map(|r| (r.article_id.clone(), r.vector.clone()))
            .collect();
        let index = FlatIndex::build(reals, train.dim()).stage("index")?;
        let spec = cfg.model_spec(train.dim());
        let model = ClassifierModel::new(&spec, &mut rng::stream(cfg.seed, Stream::Init)).stage("model")?;
        let labels = label_values(train.records());

        let (model, history, scaler, train_features) = if let Some(att) = &model.attention {
            let reference = ReferenceSet::from_index(&index);
            let (queries, ids) = embeddings(train.records());
            let raw = retrieval_features(Some(att), &reference, &queries, &ids, cfg.k, cfg.include_cosines)
                .stage("features")?;
            let scaler = fit_scaler(cfg, &raw)?;
            let data = TrainingSet::Retrieval {
                reference: &reference,
                queries: &queries,
                query_ids: &ids,
                labels: &labels,
                scaler: &scaler,
            };
            let (model, history) = nn::train(model, data, &cfg.train_config()).stage("train")?;
            (model, history, scaler, raw)
        } else {
            let raw = preprocess::feature_matrix(&index, train.records(), cfg.k, cfg.include_cosines).stage("features")?;
            let scaler = fit_scaler(cfg, &raw)?;
            let x = preprocess::transform(&scaler, &raw).stage("features")?;
            let data = TrainingSet::Features { x: &x, labels: &labels };
            let (model, history) = nn::train(model, data, &cfg.train_config()).stage("train")?;
            (model, history, scaler, raw)
        };
        Ok(Self {
            index,
            scaler,
            model,
            history,
            train_features,
        })
    }

    /// Eval-mode scores `ŷ` for `records`, self-excluded from retrieval.
    pub fn scores(&self, records: &[EmbeddingRecord]) -> Result<Vec<f64>> {
        scores(&self.index, &self.scaler, &self.model, records)
    }

    /// Classification, ROC and ranking metrics on `records`.
    pub fn evaluate(&self, records: &[EmbeddingRecord], relevance: &Relevance, cutoffs: &[usize]) -> Result<Evaluation> {
        evaluate(&self.index, &self.scaler, &self.model, records, relevance, cutoffs)
    }
}

fn fit_scaler(cfg: &PipelineConfig, raw: &Matrix) -> Result<ScalerParams> {
    if cfg.scale_features {
        preprocess::fit_scaler(raw).stage("scale")
    } else {
        Ok(ScalerParams::identity(raw.cols()))
    }
}

pub fn scores(
    index: &FlatIndex,
    scaler: &ScalerParams,
    model: &ClassifierModel,
    records: &[EmbeddingRecord],
) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    if model.attention.is_some() {
        let reference = ReferenceSet::from_index(index);
        let (queries, ids) = embeddings(records);
        score_embeddings(model, &reference, &queries, &ids, scaler).stage("predict")
    } else {
        let raw = preprocess::feature_matrix(index, records, model.k, model.with_cosines).stage("features")?;
        let x = preprocess::transform(scaler, &raw).stage("features")?;
        model.scores(Batch::Features(&x)).stage("predict")
    }
}

/// Relevance judgments for ranking metrics.
#[derive(Debug, Clone, PartialEq)]
pub enum Relevance {
    /// Class centroids of the training split; see
    /// [`RelevanceRule::NearestCentroid`].
    NearestCentroid { real: Vec<f64>, fake: Vec<f64> },
    /// Explicit judgments: query id → relevant ids.
    Pairs(HashMap<String, HashSet<String>>),
}

impl Relevance {
    pub fn nearest_centroid(train: &Dataset) -> Result<Self> {
        let centroid = |label: Label| -> Result<Vec<f64>> {
            let mut sum = vec![0.0; train.dim()];
            let mut n = 0usize;
            for r in train.with_label(label) {
                for (s, &v) in sum.iter_mut().zip(r.vector.as_slice()) {
                    *s += f64::from(v);
                }
                n += 1;
            }
            if n == 0 {
                return Err(PipelineError::Config(format!("training split has no {label} records")));
            }
            Ok(sum.into_iter().map(|s| s / n as f64).collect())
        };
        Ok(Self::NearestCentroid {
            real: centroid(Label::Real)?,
            fake: centroid(Label::Fake)?,
        })
    }

    /// Reads `query_id,relevant_id` lines; a header line is skipped when its
    /// first field is `query_id`.
    pub fn read_pairs<R: BufRead>(reader: R) -> Result<Self> {
        let mut map: HashMap<String, HashSet<String>> = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("query_id")) {
                continue;
            }
            let (q, r) = line
                .split_once(',')
                .ok_or_else(|| PipelineError::Config(format!("relevance file line {}: expected two fields", i + 1)))?;
            map.entry(q.trim().to_owned()).or_default().insert(r.trim().to_owned());
        }
        Ok(Self::Pairs(map))
    }

    pub fn from_config(cfg: &PipelineConfig, train: &Dataset) -> Result<Self> {
        match (cfg.relevance, &cfg.relevance_file) {
            (RelevanceRule::File, Some(path)) => {
                let f = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
                Self::read_pairs(std::io::BufReader::new(f))
            }
            _ => Self::nearest_centroid(train),
        }
    }

    fn cluster(real: &[f64], fake: &[f64], v: &[f32]) -> Label {
        let d = |c: &[f64]| -> f64 { c.iter().zip(v).map(|(a, &b)| (a - f64::from(b)).powi(2)).sum() };
        if d(real) <= d(fake) {
            Label::Real
        } else {
            Label::Fake
        }
    }

    /// Relevant index positions for `query`.
    fn relevant_positions(&self, index: &FlatIndex, query: &EmbeddingRecord) -> HashSet<usize> {
        match self {
            Self::NearestCentroid { real, fake } => {
                let qc = Self::cluster(real, fake, query.vector.as_slice());
                (0..index.len())
                    .filter(|&p| index.id(p) != query.article_id && Self::cluster(real, fake, index.vector(p)) == qc)
                    .collect()
            }
            Self::Pairs(map) => map.get(&query.article_id).map_or_else(HashSet::new, |ids| {
                ids.iter()
                    .filter(|id| **id != query.article_id)
                    .filter_map(|id| index.position(id))
                    .collect()
            }),
        }
    }
}

/// Ranked lists for every fake query among `records`: the query's nearest
/// indexed real articles (through the attention gate when the model has
/// one), up to the largest cutoff. Queries with nothing relevant in the
/// index are skipped; their count is returned alongside.
pub fn ranked_lists(
    index: &FlatIndex,
    model: &ClassifierModel,
    records: &[EmbeddingRecord],
    relevance: &Relevance,
    depth: usize,
) -> Result<(Vec<RankedList>, usize)> {
    let fakes: Vec<&EmbeddingRecord> = records.iter().filter(|r| r.label == Label::Fake).collect();
    let gated;
    let search_index = match &model.attention {
        Some(att) => {
            let reference = ReferenceSet::from_index(index);
            let refined = refine_rows(Some(att), reference.vectors()).stage("rank")?;
            let entries = reference
                .ids()
                .iter()
                .zip(refined.iter_rows())
                .map(|(id, v)| Ok((id.clone(), DenseVector::from_f64(v)?)))
                .collect::<Result<Vec<_>, crate::index::IndexError>>()
                .stage("rank")?;
            gated = FlatIndex::build(entries, index.dim()).stage("rank")?;
            &gated
        }
        None => index,
    };
    let mut lists = Vec::new();
    let mut skipped = 0;
    for q in fakes {
        let relevant = relevance.relevant_positions(index, q);
        if relevant.is_empty() {
            skipped += 1;
            continue;
        }
        let query: Vec<f32> = match &model.attention {
            Some(att) => nn::attention_apply(att, &q.vector.to_f64())
                .stage("rank")?
                .refined
                .iter()
                .map(|&v| v as f32)
                .collect(),
            None => q.vector.as_slice().to_vec(),
        };
        let k = depth.min(search_index.effective_len(Some(&q.article_id)));
        if k == 0 {
            skipped += 1;
            continue;
        }
        let hits = search_index
            .search_positions(&query, k, Some(&q.article_id))
            .stage("rank")?;
        let ids = hits.iter().map(|&(p, _)| search_index.id(p).to_owned()).collect();
        let marks = hits.iter().map(|(p, _)| relevant.contains(p)).collect();
        lists.push(RankedList::new(ids, marks, relevant.len()).stage("rank")?);
    }
    Ok((lists, skipped))
}

/// Results of evaluating a trained model on a set of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub roc: Option<Vec<RocPoint>>,
    pub scores: Vec<f64>,
}

pub fn evaluate(
    index: &FlatIndex,
    scaler: &ScalerParams,
    model: &ClassifierModel,
    records: &[EmbeddingRecord],
    relevance: &Relevance,
    cutoffs: &[usize],
) -> Result<Evaluation> {
    let scores = scores(index, scaler, model, records)?;
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let predicted: Vec<Label> = scores.iter().map(|&s| nn::decide(s)).collect();
    let classification = classification_metrics(&labels, &predicted).stage("metrics")?;
    let (auc, roc) = match roc_auc(&labels, &scores) {
        Ok(auc) => (Some(auc), Some(roc_curve(&labels, &scores).stage("metrics")?)),
        Err(metrics::MetricsError::SingleClass(_)) => (None, None),
        Err(e) => return Err(e).stage("metrics"),
    };
    let depth = cutoffs.iter().copied().max().unwrap_or(0);
    let (lists, skipped) = ranked_lists(index, model, records, relevance, depth)?;
    let ranking = if lists.is_empty() {
        Vec::new()
    } else {
        cutoffs
            .iter()
            .map(|&k| RankingMetrics::compute(&lists, k))
            .collect::<Result<Vec<_>, _>>()
            .stage("metrics")?
    };
    let mut report = EvalReport::new(&classification, auc, &ranking, lists.len());
    if skipped > 0 {
        report
            .warnings
            .push(format!("{skipped} fake queries had no relevant indexed article and were left out of ranking metrics"));
    }
    if auc.is_none() {
        report.warnings.push("only one class present; AUC is undefined".into());
    }
    Ok(Evaluation { report, roc, scores })
}
