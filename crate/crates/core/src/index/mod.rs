//! Exact top-k squared-L2 search over a flat vector collection.
//!
//! Vectors are stored contiguously as `f32`; distances are accumulated in
//! `f64`. Search is an exhaustive scan with a bounded max-heap, ordered by
//! `(distance, insertion position)` so exact ties resolve to the entry that was
//! inserted first. All reported distances are *squared* Euclidean distances.
//!
//! A built index is immutable and `Sync`; concurrent searches return the same
//! results as sequential ones.

mod persist;

pub use persist::{load_index, read_index, save_index, write_index, MAGIC};

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("cannot build an index from an empty collection")]
    EmptyCollection,
    #[error("vector must have at least one coordinate")]
    ZeroDimension,
    #[error("coordinate {position} is not finite")]
    NonFinite { position: usize },
    #[error("k = {k} exceeds the {available} searchable entries")]
    KTooLarge { k: usize, available: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query {position}: {source}")]
    Batch {
        position: usize,
        #[source]
        source: Box<IndexError>,
    },
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("index file version {found:?} is not supported")]
    VersionMismatch { found: String },
    #[error("index file is truncated")]
    TruncatedFile,
    #[error("id at record {record} is not valid UTF-8")]
    InvalidId { record: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IndexError> = std::result::Result<T, E>;

/// A finite, non-empty embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct DenseVector(Vec<f32>);

impl DenseVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(IndexError::ZeroDimension);
        }
        if let Some(position) = values.iter().position(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite { position });
        }
        Ok(Self(values))
    }

    /// Converts from `f64`, rejecting values that overflow `f32`.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl TryFrom<Vec<f32>> for DenseVector {
    type Error = IndexError;

    fn try_from(v: Vec<f32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DenseVector> for Vec<f32> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

impl AsRef<[f32]> for DenseVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: String,
    /// Squared L2 distance to the query.
    pub distance: f64,
}

/// Hits ordered by ascending distance, ties by insertion order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchHitList {
    pub hits: Vec<SearchHit>,
}

impl SearchHitList {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.hits.iter().map(|h| h.distance).collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.id.as_str())
    }
}

/// Exact flat index. Entry order is insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    positions: HashMap<String, usize>,
}

/// Squared L2 distance with `f64` accumulation.
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f64,
    position: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.position.cmp(&other.position))
    }
}

impl FlatIndex {
    /// Builds an index from `(id, vector)` pairs, keeping input order.
    pub fn build<I, S>(records: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (S, DenseVector)>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(IndexError::ZeroDimension);
        }
        let mut index = Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            positions: HashMap::new(),
        };
        for (id, vector) in records {
            index.push(id.into(), vector.as_slice())?;
        }
        if index.ids.is_empty() {
            return Err(IndexError::EmptyCollection);
        }
        Ok(index)
    }

    fn push(&mut self, id: String, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if self.positions.contains_key(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn id(&self, position: usize) -> &str {
        &self.ids[position]
    }

    pub fn vector(&self, position: usize) -> &[f32] {
        &self.data[position * self.dim..(position + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|p| self.vector(p))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }

    /// Number of entries a search may return once `exclude_id` is removed.
    pub fn effective_len(&self, exclude_id: Option<&str>) -> usize {
        match exclude_id {
            Some(id) if self.contains(id) => self.len() - 1,
            _ => self.len(),
        }
    }

    /// The `k` entries closest to `query`, ascending.
    pub fn search(&self, query: &[f32], k: usize, exclude_id: Option<&str>) -> Result<SearchHitList> {
        let positions = self.search_positions(query, k, exclude_id)?;
        Ok(SearchHitList {
            hits: positions
                .into_iter()
                .map(|(position, distance)| SearchHit {
                    id: self.ids[position].clone(),
                    distance,
                })
                .collect(),
        })
    }

    /// Like [`search`](Self::search) but returns entry positions instead of
    /// cloned ids.
    pub fn search_positions(
        &self,
        query: &[f32],
        k: usize,
        exclude_id: Option<&str>,
    ) -> Result<Vec<(usize, f64)>> {
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let available = self.effective_len(exclude_id);
        if k > available {
            return Err(IndexError::KTooLarge { k, available });
        }
        let skip = exclude_id.and_then(|id| self.position(id));

        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for (position, v) in self.data.chunks_exact(self.dim).enumerate() {
            if Some(position) == skip {
                continue;
            }
            let candidate = Candidate {
                distance: squared_l2(query, v),
                position,
            };
            if heap.len() < k {
                heap.push(candidate);
            } else if let Some(worst) = heap.peek() {
                if candidate < *worst {
                    heap.pop();
                    heap.push(candidate);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.position, c.distance))
            .collect())
    }

    /// Runs [`search`](Self::search) for each query. Output order matches
    /// query order; the first failing query is reported with its position.
    pub fn batch_search<Q>(
        &self,
        queries: &[Q],
        k: usize,
        exclusions: Option<&[Option<String>]>,
    ) -> Result<Vec<SearchHitList>>
    where
        Q: AsRef<[f32]> + Sync,
    {
        if let Some(ex) = exclusions {
            if ex.len() != queries.len() {
                return Err(IndexError::DimensionMismatch {
                    expected: queries.len(),
                    actual: ex.len(),
                });
            }
        }
        let one = |position: usize| {
            let exclude = exclusions.and_then(|ex| ex[position].as_deref());
            self.search(queries[position].as_ref(), k, exclude)
                .map_err(|e| IndexError::Batch {
                    position,
                    source: Box::new(e),
                })
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..queries.len()).into_par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..queries.len()).map(one).collect()
        }
    }
}
