//! Retrieval-augmented binary classification.
//!
//! Articles arrive as pre-computed embeddings. Real-news embeddings from the
//! training split are stored in an exact [`index::FlatIndex`]; every article is
//! then described by the squared L2 distances (and optionally cosine scores)
//! to its `k` nearest indexed real articles. Those retrieval features feed a
//! small dense network ([`nn`]) trained with hand-derived gradients. The
//! attention variant gates each embedding with `softmax(W_a e) ⊙ e` before
//! retrieval, so `W_a` is learned through the distance computation.
//!
//! Module map:
//!
//! - [`index`]: exact top-k search and the `NXIDX1` file format
//! - [`data`]: JSONL ingestion, synthetic embeddings, stratified splitting
//! - [`preprocess`]: standardization, cosine scores, retrieval features
//! - [`nn`]: attention, dense/batch-norm/dropout stack, BCE, SGD training
//! - [`metrics`]: classification, ROC/AUC and ranking metrics
//! - [`pipeline`]: config, run orchestration and the CLI commands

pub mod data;
pub mod index;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod rng;

pub use data::{Dataset, EmbeddingRecord, Label, ModelTag, SplitSpec};
pub use index::{DenseVector, FlatIndex, SearchHit, SearchHitList};
pub use linalg::Matrix;
