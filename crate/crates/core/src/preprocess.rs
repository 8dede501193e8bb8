//! Feature construction: standardization, cosine scores and the k-distance
//! retrieval features.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EmbeddingRecord, Label};
use crate::index::{FlatIndex, IndexError};
use crate::linalg::Matrix;

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("need at least 2 rows to fit a scaler, got {0}")]
    TooFewRows(usize),
    #[error("expected {expected} columns, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PreprocessError> = std::result::Result<T, E>;

/// Fitted per-column standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl ScalerParams {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// The identity transform on `width` columns.
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
            epsilon: DEFAULT_EPSILON,
        }
    }

    /// Divisor used for column `j`.
    pub fn scale(&self, j: usize) -> f64 {
        self.std[j].max(self.epsilon)
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_width(row.len())?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &x)| (x - self.mean[j]) / self.scale(j))
            .collect())
    }

    fn check_width(&self, actual: usize) -> Result<()> {
        if actual != self.width() {
            return Err(PreprocessError::WidthMismatch {
                expected: self.width(),
                actual,
            });
        }
        Ok(())
    }
}

pub fn fit_scaler(rows: &Matrix) -> Result<ScalerParams> {
    if rows.rows() < 2 {
        return Err(PreprocessError::TooFewRows(rows.rows()));
    }
    let n = rows.rows() as f64;
    let mean: Vec<f64> = rows.sum_rows().into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; rows.cols()];
    for r in rows.iter_rows() {
        for ((acc, &x), m) in var.iter_mut().zip(r).zip(&mean) {
            *acc += (x - m) * (x - m);
        }
    }
    Ok(ScalerParams {
        mean,
        std: var.into_iter().map(|v| (v / n).sqrt()).collect(),
        epsilon: DEFAULT_EPSILON,
    })
}

/// `z = (x - mean) / max(std, epsilon)` column-wise.
pub fn transform(params: &ScalerParams, rows: &Matrix) -> Result<Matrix> {
    params.check_width(rows.cols())?;
    let mut out = rows.clone();
    for r in 0..out.rows() {
        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = (*v - params.mean[j]) / params.scale(j);
        }
    }
    Ok(out)
}

pub fn inverse_transform(params: &ScalerParams, rows: &Matrix) -> Result<Matrix> {
    params.check_width(rows.cols())?;
    let mut out = rows.clone();
    for r in 0..out.rows() {
        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = *v * params.scale(j) + params.mean[j];
        }
    }
    Ok(out)
}

pub fn fit_transform(rows: &Matrix) -> Result<(ScalerParams, Matrix)> {
    let params = fit_scaler(rows)?;
    let z = transform(&params, rows)?;
    Ok((params, z))
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PreprocessError::WidthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(PreprocessError::ZeroVector);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// The classifier input for one article: ascending squared-L2 distances to
/// its `k` nearest indexed real articles, optionally followed by the cosine
/// scores against the same neighbours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalFeatures {
    pub distances: Vec<f64>,
    pub cosines: Option<Vec<f64>>,
}

impl RetrievalFeatures {
    pub fn k(&self) -> usize {
        self.distances.len()
    }

    /// `[d1..dk, c1..ck]`.
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = self.distances.clone();
        if let Some(c) = &self.cosines {
            row.extend_from_slice(c);
        }
        row
    }
}

/// Width of a feature row for `k` neighbours.
pub fn feature_width(k: usize, include_cosines: bool) -> usize {
    if include_cosines {
        2 * k
    } else {
        k
    }
}

/// Retrieves the `k` nearest indexed articles for `record`, never counting the
/// record itself.
pub fn extract_retrieval_features(
    index: &FlatIndex,
    record: &EmbeddingRecord,
    k: usize,
    include_cosines: bool,
) -> Result<RetrievalFeatures> {
    let query = record.vector.as_slice();
    let hits = index.search_positions(query, k, Some(&record.article_id))?;
    let cosines = if include_cosines {
        Some(
            hits.iter()
                .map(|&(p, _)| cosine_similarity(query, index.vector(p)))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(RetrievalFeatures {
        distances: hits.into_iter().map(|(_, d)| d).collect(),
        cosines,
    })
}

/// Feature rows for many records, in record order.
pub fn feature_matrix(
    index: &FlatIndex,
    records: &[EmbeddingRecord],
    k: usize,
    include_cosines: bool,
) -> Result<Matrix> {
    let one = |r: &EmbeddingRecord| extract_retrieval_features(index, r, k, include_cosines).map(|f| f.to_row());
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        records.par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = records.iter().map(one).collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, feature_width(k, include_cosines)));
    }
    Ok(Matrix::from_rows(&rows).expect("feature rows share one width"))
}

/// Writes a feature matrix as CSV with header `d1..dk[,c1..ck],label`.
pub fn write_features_csv<W: Write>(
    mut out: W,
    features: &Matrix,
    labels: &[Label],
    k: usize,
    include_cosines: bool,
) -> Result<()> {
    let width = feature_width(k, include_cosines);
    if features.cols() != width {
        return Err(PreprocessError::WidthMismatch {
            expected: width,
            actual: features.cols(),
        });
    }
    let mut header: Vec<String> = (1..=k).map(|i| format!("d{i}")).collect();
    if include_cosines {
        header.extend((1..=k).map(|i| format!("c{i}")));
    }
    header.push("label".into());
    writeln!(out, "{}", header.join(","))?;
    for (row, label) in features.iter_rows().zip(labels) {
        for v in row {
            write!(out, "{v},")?;
        }
        writeln!(out, "{}", *label as u8)?;
    }
    Ok(())
}
