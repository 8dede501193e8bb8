//! The in-network retrieval layer.
//!
//! Given raw embeddings for a batch of queries and, per query, the raw
//! embeddings of its `k` selected neighbours, this layer gates every vector
//! with the attention weights and recomputes squared distances (and cosines)
//! from the gated vectors. Neighbour selection itself is a separate,
//! non-differentiable search over the gated reference set.

use super::attention::{attention_apply, attention_backward, AttentionParams};
use super::{NnError, Result};
use crate::index::{DenseVector, FlatIndex, IndexError};
use crate::linalg::{dot, Matrix};
use crate::preprocess::{feature_width, PreprocessError, ScalerParams};

/// The indexed real-news embeddings, in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    ids: Vec<String>,
    vectors: Matrix,
}

impl ReferenceSet {
    pub fn new(ids: Vec<String>, vectors: Matrix) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(NnError::LengthMismatch {
                expected: vectors.rows(),
                actual: ids.len(),
            });
        }
        Ok(Self { ids, vectors })
    }

    pub fn from_index(index: &FlatIndex) -> Self {
        let mut data = Vec::with_capacity(index.len() * index.dim());
        let mut ids = Vec::with_capacity(index.len());
        for (id, v) in index.iter() {
            ids.push(id.to_owned());
            data.extend(v.iter().map(|&x| f64::from(x)));
        }
        Self {
            ids,
            vectors: Matrix::from_vec(index.len(), index.dim(), data),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }
}

/// Raw query embeddings with the raw embeddings of their neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalBatch {
    pub queries: Matrix,
    /// One `k × d` matrix per query, nearest first.
    pub neighbors: Vec<Matrix>,
}

impl RetrievalBatch {
    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.rows() == 0
    }
}

#[derive(Debug, Clone)]
struct Gated {
    raw: Vec<f64>,
    gates: Option<Vec<f64>>,
    refined: Vec<f64>,
}

#[derive(Debug, Clone)]
struct RowCache {
    query: Gated,
    neighbors: Vec<Gated>,
}

#[derive(Debug, Clone)]
pub(crate) struct RetrievalCache {
    rows: Vec<RowCache>,
}

fn gate(att: Option<&AttentionParams>, e: &[f64]) -> Result<Gated> {
    Ok(match att {
        Some(a) => {
            let out = attention_apply(a, e)?;
            Gated {
                raw: e.to_vec(),
                gates: Some(out.gates),
                refined: out.refined,
            }
        }
        None => Gated {
            raw: e.to_vec(),
            gates: None,
            refined: e.to_vec(),
        },
    })
}

/// Gates every row of `m`.
pub fn refine_rows(att: Option<&AttentionParams>, m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    if let Some(a) = att {
        for r in 0..m.rows() {
            let g = attention_apply(a, m.row(r))?;
            out.row_mut(r).copy_from_slice(&g.refined);
        }
    }
    Ok(out)
}

/// Unscaled feature rows `[d1..dk, c1..ck]` from gated vectors.
pub(crate) fn forward(
    att: Option<&AttentionParams>,
    batch: &RetrievalBatch,
    k: usize,
    with_cosines: bool,
) -> Result<(Matrix, RetrievalCache)> {
    if batch.neighbors.len() != batch.queries.rows() {
        return Err(NnError::LengthMismatch {
            expected: batch.queries.rows(),
            actual: batch.neighbors.len(),
        });
    }
    let dim = batch.queries.cols();
    let mut out = Matrix::zeros(batch.len(), feature_width(k, with_cosines));
    let mut rows = Vec::with_capacity(batch.len());
    for (r, nbrs) in batch.neighbors.iter().enumerate() {
        if nbrs.rows() != k {
            return Err(NnError::WidthMismatch {
                expected: k,
                actual: nbrs.rows(),
            });
        }
        if nbrs.cols() != dim {
            return Err(NnError::DimensionMismatch {
                expected: dim,
                actual: nbrs.cols(),
            });
        }
        let query = gate(att, batch.queries.row(r))?;
        let neighbors = nbrs.iter_rows().map(|n| gate(att, n)).collect::<Result<Vec<_>>>()?;
        let qn = dot(&query.refined, &query.refined).sqrt();
        let row = out.row_mut(r);
        for (j, n) in neighbors.iter().enumerate() {
            row[j] = query
                .refined
                .iter()
                .zip(&n.refined)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if with_cosines {
                let nn = dot(&n.refined, &n.refined).sqrt();
                if qn == 0.0 || nn == 0.0 {
                    return Err(PreprocessError::ZeroVector.into());
                }
                row[k + j] = (dot(&query.refined, &n.refined) / (qn * nn)).clamp(-1.0, 1.0);
            }
        }
        rows.push(RowCache { query, neighbors });
    }
    Ok((out, RetrievalCache { rows }))
}

/// `∂L/∂W_a` given the gradient with respect to the *scaled* feature rows.
pub(crate) fn backward(
    att: &AttentionParams,
    cache: &RetrievalCache,
    d_scaled: &Matrix,
    scaler: &ScalerParams,
    with_cosines: bool,
) -> Matrix {
    let mut grad = Matrix::zeros(att.dim(), att.dim());
    for (r, row) in cache.rows.iter().enumerate() {
        let k = row.neighbors.len();
        let g = d_scaled.row(r);
        let q = &row.query.refined;
        let qn2 = dot(q, q);
        let mut dq = vec![0.0; q.len()];
        for (j, n) in row.neighbors.iter().enumerate() {
            let nv = &n.refined;
            let gd = g[j] / scaler.scale(j);
            let mut dn = vec![0.0; q.len()];
            for ((dqi, dni), (a, b)) in dq.iter_mut().zip(dn.iter_mut()).zip(q.iter().zip(nv)) {
                let t = 2.0 * gd * (a - b);
                *dqi += t;
                *dni -= t;
            }
            if with_cosines {
                let gc = g[k + j] / scaler.scale(k + j);
                let nn2 = dot(nv, nv);
                let inv = 1.0 / (qn2.sqrt() * nn2.sqrt());
                let c = dot(q, nv) * inv;
                for ((dqi, dni), (a, b)) in dq.iter_mut().zip(dn.iter_mut()).zip(q.iter().zip(nv)) {
                    *dqi += gc * (b * inv - c * a / qn2);
                    *dni += gc * (a * inv - c * b / nn2);
                }
            }
            if let Some(gates) = &n.gates {
                attention_backward(&n.raw, gates, &dn, &mut grad);
            }
        }
        if let Some(gates) = &row.query.gates {
            attention_backward(&row.query.raw, gates, &dq, &mut grad);
        }
    }
    grad
}

/// For each query, the reference positions of its `k` nearest gated
/// neighbours, excluding a reference entry with the query's own id.
pub fn select_neighbors(
    att: Option<&AttentionParams>,
    reference: &ReferenceSet,
    queries: &Matrix,
    query_ids: &[String],
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    if queries.cols() != reference.dim() {
        return Err(NnError::DimensionMismatch {
            expected: reference.dim(),
            actual: queries.cols(),
        });
    }
    if query_ids.len() != queries.rows() {
        return Err(NnError::LengthMismatch {
            expected: queries.rows(),
            actual: query_ids.len(),
        });
    }
    let gated_ref = refine_rows(att, reference.vectors())?;
    let entries = reference
        .ids()
        .iter()
        .zip(gated_ref.iter_rows())
        .map(|(id, v)| Ok((id.clone(), DenseVector::from_f64(v)?)))
        .collect::<Result<Vec<_>, IndexError>>()?;
    let index = FlatIndex::build(entries, reference.dim())?;
    let gated_q = refine_rows(att, queries)?;
    let one = |i: usize| -> Result<Vec<usize>> {
        let q: Vec<f32> = gated_q.row(i).iter().map(|&v| v as f32).collect();
        let hits = index.search_positions(&q, k, Some(&query_ids[i]))?;
        Ok(hits.into_iter().map(|(p, _)| p).collect())
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..queries.rows()).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..queries.rows()).map(one).collect()
    }
}

/// Unscaled feature rows for `queries`, with neighbours selected and distances
/// computed through the attention gate.
pub fn retrieval_features(
    att: Option<&AttentionParams>,
    reference: &ReferenceSet,
    queries: &Matrix,
    query_ids: &[String],
    k: usize,
    with_cosines: bool,
) -> Result<Matrix> {
    let nb = select_neighbors(att, reference, queries, query_ids, k)?;
    let all: Vec<usize> = (0..queries.rows()).collect();
    let batch = gather(reference, queries, &all, &nb);
    Ok(forward(att, &batch, k, with_cosines)?.0)
}

/// Assembles the batch for query rows `rows`.
pub fn gather(reference: &ReferenceSet, queries: &Matrix, rows: &[usize], neighbors: &[Vec<usize>]) -> RetrievalBatch {
    RetrievalBatch {
        queries: queries.select_rows(rows),
        neighbors: rows
            .iter()
            .map(|&r| reference.vectors().select_rows(&neighbors[r]))
            .collect(),
    }
}
