//! The retrieval-feature classifier.
//!
//! Two variants share one dense head (`k` or `2k` inputs → hidden → hidden → 1):
//!
//! - **ModelI**: `σ(W₃ ReLU(W₂ ReLU(W₁ x + b₁) + b₂) + b₃)` on precomputed,
//!   standardized retrieval features.
//! - **ModelII**: each hidden layer is `Dropout(ReLU(BatchNorm(W x + b)))`.
//!   With attention enabled, the raw embedding of the query and of each of its
//!   `k` selected neighbours is gated by `softmax(W_a e) ⊙ e` and the distances
//!   (and cosines) are recomputed from the gated vectors inside the forward
//!   pass. Neighbour identities come from a search over the gated reference
//!   set and are held fixed while a step is computed, so `W_a` is trained
//!   through the distance values only.
//!
//! All arithmetic is `f64`. Trainable parameters are kept at `f32` precision
//! (initialization and every SGD step round to `f32`) so checkpoints, which
//! store `f32`, reload bit-exactly.

pub mod attention;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod retrieval;
pub mod train;

pub use attention::{attention_apply, softmax, AttentionOutput, AttentionParams};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use layers::{BatchNormParams, DenseParams};
pub use loss::{bce_loss, sigmoid, BCE_CLAMP};
pub use model::{Batch, ClassifierModel, ForwardCache, Gradients, Mode, ModelSpec, Variant, NARROW, WIDE};
pub use retrieval::{refine_rows, retrieval_features, select_neighbors, ReferenceSet, RetrievalBatch};
pub use train::{decide, predict, score_embeddings, train, EpochStats, History, Prediction, TrainConfig, TrainingSet};

use thiserror::Error;

use crate::index::IndexError;
use crate::preprocess::PreprocessError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("expected {expected} input columns, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("length mismatch: {expected} predictions vs {actual} labels")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("train-mode forward with dropout needs a random source")]
    MissingRng,
    #[error("a model with attention must be fed raw embeddings and their neighbours")]
    NeedsEmbeddings,
    #[error("invalid model or training configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
