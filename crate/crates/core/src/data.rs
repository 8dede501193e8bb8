//! Datasets of labelled embeddings: JSONL ingestion, a synthetic provider and
//! stratified train/test splitting.
//!
//! Embeddings are consumed as data. Each JSONL line looks like
//!
//! ```text
//! {"id": "a1", "label": 1, "model": "roberta", "vector": [0.1, -0.3, ...], "text": "optional"}
//! ```
//!
//! with `label` 1 for real news and 0 for fake news.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::index::DenseVector;
use crate::rng::{self, Stream};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: label {label} is not 0 or 1")]
    LabelOutOfRange { line: usize, label: String },
    #[error("line {line}: vector has {actual} values, expected {expected}")]
    DimInconsistent {
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: vector value at position {position} is not a finite 32-bit float")]
    NonFiniteValue { line: usize, position: usize },
    #[error("dataset contains no records")]
    Empty,
    #[error("no {0} records to stratify on")]
    EmptyClass(Label),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DataError {
    /// The 1-based input line an ingestion error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::ParseError { line, .. }
            | Self::LabelOutOfRange { line, .. }
            | Self::DimInconsistent { line, .. }
            | Self::DuplicateId { line, .. }
            | Self::NonFiniteValue { line, .. } => Some(*line),
            _ => None,
        }
    }
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Fake = 0,
    Real = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Fake, Label::Real];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Fake),
            1 => Some(Self::Real),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Fake => "fake",
            Self::Real => "real",
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        Self::from_u8(v).ok_or_else(|| format!("label {v} is not 0 or 1"))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The embedding model that produced a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Bert,
    Roberta,
    Gpt2,
    Distilbert,
    Synthetic,
}

impl ModelTag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bert => "bert",
            Self::Roberta => "roberta",
            Self::Gpt2 => "gpt2",
            Self::Distilbert => "distilbert",
            Self::Synthetic => "synthetic",
        }
    }
}

impl FromStr for ModelTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bert" => Ok(Self::Bert),
            "roberta" => Ok(Self::Roberta),
            "gpt2" | "gpt" => Ok(Self::Gpt2),
            "distilbert" => Ok(Self::Distilbert),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(format!("unknown embedding model {other:?}")),
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub article_id: String,
    pub label: Label,
    pub model_tag: ModelTag,
    pub vector: DenseVector,
    pub text: Option<String>,
}

/// Records sharing one embedding dimension, with unique ids.
///
/// A file may mix embedding models of the same width; use
/// [`Dataset::filter_tag`] to get the single-model view a run trains on.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<EmbeddingRecord>,
    dim: usize,
}

impl Dataset {
    /// Validates and wraps `records`. The dimension is taken from the first
    /// record.
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let dim = records.first().ok_or(DataError::Empty)?.vector.dim();
        Self::with_dim(records, dim)
    }

    /// Like [`new`](Self::new) but allows an empty record list.
    pub fn with_dim(records: Vec<EmbeddingRecord>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(DataError::InvalidArgument("dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.vector.dim() != dim {
                return Err(DataError::DimInconsistent {
                    line: i + 1,
                    expected: dim,
                    actual: r.vector.dim(),
                });
            }
            if !seen.insert(r.article_id.as_str()) {
                return Err(DataError::DuplicateId {
                    line: i + 1,
                    id: r.article_id.clone(),
                });
            }
        }
        Ok(Self { records, dim })
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    pub fn with_label(&self, label: Label) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.iter().filter(move |r| r.label == label)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn model_tags(&self) -> Vec<ModelTag> {
        let mut tags: Vec<_> = self.records.iter().map(|r| r.model_tag).collect();
        tags.sort();
        tags.dedup();
        tags
    }

    /// Records produced by one embedding model, in original order.
    pub fn filter_tag(&self, tag: ModelTag) -> Dataset {
        Dataset {
            records: self
                .records
                .iter()
                .filter(|r| r.model_tag == tag)
                .cloned()
                .collect(),
            dim: self.dim,
        }
    }

    /// `(total, fake, real)` counts per model tag.
    pub fn tag_counts(&self) -> BTreeMap<ModelTag, (usize, usize, usize)> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            let e = out.entry(r.model_tag).or_insert((0, 0, 0));
            e.0 += 1;
            match r.label {
                Label::Fake => e.1 += 1,
                Label::Real => e.2 += 1,
            }
        }
        out
    }

    fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            records: positions.iter().map(|&p| self.records[p].clone()).collect(),
            dim: self.dim,
        }
    }
}

fn parse_line(line_no: usize, line: &str) -> Result<EmbeddingRecord> {
    let parse_err = |message: String| DataError::ParseError {
        line: line_no,
        message,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err("expected a JSON object".into()))?;

    let article_id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(parse_err("\"id\" must be a string".into())),
        None => return Err(parse_err("missing \"id\"".into())),
    };
    let label = match obj.get("label") {
        Some(Value::Number(n)) => match n.as_u64().and_then(|v| u8::try_from(v).ok()).and_then(Label::from_u8) {
            Some(l) => l,
            None => {
                return Err(DataError::LabelOutOfRange {
                    line: line_no,
                    label: n.to_string(),
                })
            }
        },
        Some(_) => return Err(parse_err("\"label\" must be 0 or 1".into())),
        None => return Err(parse_err("missing \"label\"".into())),
    };
    let model_tag = match obj.get("model") {
        Some(Value::String(s)) => s.parse::<ModelTag>().map_err(parse_err)?,
        Some(_) => return Err(parse_err("\"model\" must be a string".into())),
        None => return Err(parse_err("missing \"model\"".into())),
    };
    let raw = match obj.get("vector") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err(parse_err("\"vector\" must be an array of numbers".into())),
        None => return Err(parse_err("missing \"vector\"".into())),
    };
    if raw.is_empty() {
        return Err(parse_err("\"vector\" is empty".into()));
    }
    let mut values = Vec::with_capacity(raw.len());
    for (position, v) in raw.iter().enumerate() {
        let x = v
            .as_f64()
            .ok_or_else(|| parse_err(format!("vector[{position}] is not a number")))?;
        let x = x as f32;
        if !x.is_finite() {
            return Err(DataError::NonFiniteValue {
                line: line_no,
                position,
            });
        }
        values.push(x);
    }
    let text = match obj.get("text") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(parse_err("\"text\" must be a string".into())),
    };
    Ok(EmbeddingRecord {
        article_id,
        label,
        model_tag,
        vector: DenseVector::new(values).expect("checked finite and non-empty"),
        text,
    })
}

/// Reads a JSONL dataset. Blank lines are skipped; every other line yields a
/// record or an error carrying its 1-based line number.
pub fn load_jsonl<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut records: Vec<EmbeddingRecord> = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_line(line_no, &line)?;
        let d = *dim.get_or_insert(rec.vector.dim());
        if rec.vector.dim() != d {
            return Err(DataError::DimInconsistent {
                line: line_no,
                expected: d,
                actual: rec.vector.dim(),
            });
        }
        if !seen.insert(rec.article_id.clone()) {
            return Err(DataError::DuplicateId {
                line: line_no,
                id: rec.article_id,
            });
        }
        records.push(rec);
    }
    let dim = dim.ok_or(DataError::Empty)?;
    Ok(Dataset { records, dim })
}

pub fn load_jsonl_path(path: impl AsRef<Path>) -> Result<Dataset> {
    load_jsonl(BufReader::new(File::open(path)?))
}

#[derive(Serialize)]
struct JsonLine<'a> {
    id: &'a str,
    label: u8,
    model: &'a str,
    vector: &'a [f32],
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
}

/// Writes records in the ingestion schema. Coordinates are printed in their
/// shortest round-trip form, so reading the file back is exact.
pub fn write_jsonl<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for r in dataset.records() {
        let line = JsonLine {
            id: &r.article_id,
            label: r.label.into(),
            model: r.model_tag.as_str(),
            vector: r.vector.as_slice(),
            text: r.text.as_deref(),
        };
        serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Gaussian test embeddings: real vectors centred at `+separation·u`, fake at
/// `-separation·u`, where `u` is the unit all-ones direction, with unit
/// variance per coordinate. Reals come first (`real-00000`, ...), then fakes.
pub fn synthesize(seed: u64, n_real: usize, n_fake: usize, dim: usize, separation: f64) -> Result<Dataset> {
    if dim == 0 {
        return Err(DataError::InvalidArgument("dim must be at least 1".into()));
    }
    if n_real + n_fake < 2 {
        return Err(DataError::InvalidArgument("need at least two records".into()));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(DataError::InvalidArgument("separation must be finite and nonnegative".into()));
    }
    let shift = separation / (dim as f64).sqrt();
    let mut rng = rng::stream(seed, Stream::Synthesize);
    let mut records = Vec::with_capacity(n_real + n_fake);
    for (label, count, sign) in [(Label::Real, n_real, 1.0), (Label::Fake, n_fake, -1.0)] {
        for i in 0..count {
            let values: Vec<f32> = (0..dim)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (sign * shift + z) as f32
                })
                .collect();
            records.push(EmbeddingRecord {
                article_id: format!("{}-{i:05}", label.name()),
                label,
                model_tag: ModelTag::Synthetic,
                vector: DenseVector::new(values).map_err(|e| DataError::InvalidArgument(e.to_string()))?,
                text: None,
            });
        }
    }
    Ok(Dataset { records, dim })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DataError::InvalidArgument(format!(
                "train_fraction {} is not in (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Partitions `dataset` into `(train, test)`. Both halves keep the original
/// record order. With stratification each label contributes
/// `round(train_fraction · count)` records to the training side.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Split);
    let mut train = Vec::new();
    let groups: Vec<Vec<usize>> = if spec.stratified {
        Label::ALL
            .iter()
            .map(|&label| {
                let members: Vec<usize> = (0..dataset.len())
                    .filter(|&i| dataset.records[i].label == label)
                    .collect();
                if members.is_empty() {
                    Err(DataError::EmptyClass(label))
                } else {
                    Ok(members)
                }
            })
            .collect::<Result<_>>()?
    } else {
        vec![(0..dataset.len()).collect()]
    };
    for mut members in groups {
        members.shuffle(&mut rng);
        let n_train = (spec.train_fraction * members.len() as f64).round() as usize;
        train.extend_from_slice(&members[..n_train]);
    }
    train.sort_unstable();
    let mut in_train = vec![false; dataset.len()];
    for &i in &train {
        in_train[i] = true;
    }
    let test: Vec<usize> = (0..dataset.len()).filter(|&i| !in_train[i]).collect();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, label: u8, v: &[f32]) -> String {
        format!(r#"{{"id":"{id}","label":{label},"model":"bert","vector":{v:?}}}"#)
    }

    #[test]
    fn loads_two_valid_lines() {
        let src = format!("{}\n{}\n", line("a", 0, &[1.0, 2.0, 3.0, 4.0]), line("b", 1, &[0.0; 4]));
        let ds = load_jsonl(src.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.records()[1].label, Label::Real);
        assert_eq!(ds.records()[0].model_tag, ModelTag::Bert);
    }

    #[test]
    fn label_out_of_range_is_located() {
        let src = format!("{}\n{}\n", line("a", 0, &[1.0]), line("b", 2, &[1.0]));
        let err = load_jsonl(src.as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::LabelOutOfRange { line: 2, .. }), "{err}");
    }

    #[test]
    fn third_vector_of_other_length() {
        let src = [line("a", 0, &[1.0, 1.0]), line("b", 1, &[1.0, 1.0]), line("c", 1, &[1.0])].join("\n");
        let err = load_jsonl(src.as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::DimInconsistent { line: 3, expected: 2, actual: 1 }));
    }

    #[test]
    fn other_ingestion_errors() {
        let dup = [line("a", 0, &[1.0]), line("a", 1, &[1.0])].join("\n");
        assert!(matches!(
            load_jsonl(dup.as_bytes()),
            Err(DataError::DuplicateId { line: 2, .. })
        ));
        let big = r#"{"id":"x","label":1,"model":"bert","vector":[1e39]}"#;
        assert!(matches!(
            load_jsonl(big.as_bytes()),
            Err(DataError::NonFiniteValue { line: 1, position: 0 })
        ));
        let junk = format!("{}\n{{not json\n", line("a", 0, &[1.0]));
        assert!(matches!(load_jsonl(junk.as_bytes()), Err(DataError::ParseError { line: 2, .. })));
        let model = r#"{"id":"x","label":1,"model":"t5","vector":[1]}"#;
        assert!(matches!(load_jsonl(model.as_bytes()), Err(DataError::ParseError { line: 1, .. })));
        assert!(matches!(load_jsonl("\n\n".as_bytes()), Err(DataError::Empty)));
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let ds = synthesize(3, 4, 4, 5, 1.5).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&ds, &mut buf).unwrap();
        assert_eq!(load_jsonl(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn synthesize_is_deterministic() {
        assert_eq!(synthesize(7, 10, 10, 8, 0.0).unwrap(), synthesize(7, 10, 10, 8, 0.0).unwrap());
        assert_ne!(synthesize(7, 10, 10, 8, 0.0).unwrap(), synthesize(8, 10, 10, 8, 0.0).unwrap());
    }

    #[test]
    fn synthesize_rejects_bad_arguments() {
        assert!(synthesize(1, 1, 0, 4, 1.0).is_err());
        assert!(synthesize(1, 1, 1, 0, 1.0).is_err());
        assert!(synthesize(1, 1, 1, 2, -1.0).is_err());
    }

    fn centroid_gap_along_u(ds: &Dataset) -> f64 {
        let dim = ds.dim() as f64;
        let proj = |label| {
            let v: Vec<f64> = ds
                .with_label(label)
                .map(|r| r.vector.as_slice().iter().map(|&x| f64::from(x)).sum::<f64>() / dim.sqrt())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        proj(Label::Real) - proj(Label::Fake)
    }

    #[test]
    fn centroid_distance_tracks_separation() {
        let gap = centroid_gap_along_u(&synthesize(42, 500, 500, 32, 2.0).unwrap());
        assert!((gap - 4.0).abs() < 0.2, "gap {gap}");
        let null = centroid_gap_along_u(&synthesize(42, 2000, 2000, 32, 0.0).unwrap());
        assert!(null.abs() < 0.1, "null gap {null}");
    }

    #[test]
    fn stratified_split_counts() {
        let ds = synthesize(1, 5, 5, 2, 1.0).unwrap();
        let spec = SplitSpec {
            seed: 9,
            ..SplitSpec::default()
        };
        let (train, test) = split(&ds, &spec).unwrap();
        assert_eq!((train.len(), train.count(Label::Fake), train.count(Label::Real)), (8, 4, 4));
        assert_eq!((test.len(), test.count(Label::Fake), test.count(Label::Real)), (2, 1, 1));
        let (train2, test2) = split(&ds, &spec).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn stratified_split_needs_both_classes() {
        let ds = synthesize(1, 5, 0, 2, 1.0).unwrap();
        assert!(matches!(split(&ds, &SplitSpec::default()), Err(DataError::EmptyClass(Label::Fake))));
        let unstrat = SplitSpec {
            stratified: false,
            ..SplitSpec::default()
        };
        assert_eq!(split(&ds, &unstrat).unwrap().0.len(), 4);
        let bad = SplitSpec {
            train_fraction: 1.0,
            ..SplitSpec::default()
        };
        assert!(matches!(split(&ds, &bad), Err(DataError::InvalidArgument(_))));
    }

    #[test]
    fn filter_and_counts() {
        let src = [
            line("a", 0, &[1.0]),
            r#"{"id":"b","label":1,"model":"gpt2","vector":[2.0],"text":"hi"}"#.to_string(),
            line("c", 1, &[3.0]),
        ]
        .join("\n");
        let ds = load_jsonl(src.as_bytes()).unwrap();
        assert_eq!(ds.model_tags(), vec![ModelTag::Bert, ModelTag::Gpt2]);
        assert_eq!(ds.filter_tag(ModelTag::Bert).len(), 2);
        assert_eq!(ds.tag_counts()[&ModelTag::Bert], (2, 1, 1));
        assert_eq!(ds.records()[1].text.as_deref(), Some("hi"));
    }
}
