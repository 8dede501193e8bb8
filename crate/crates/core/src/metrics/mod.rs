//! Evaluation metrics.
//!
//! The positive class for precision/recall/F1 and ROC is [`Label::Real`].
//! Zero denominators produce `0.0` together with a warning string, so reports
//! never contain NaN.
//!
//! [`Label::Real`]: crate::data::Label::Real

pub mod classification;
pub mod ranking;
pub mod report;
pub mod roc;

pub use classification::{classification_metrics, f1, report_from_counts, Averages, ClassMetrics, ClassificationReport, ConfusionCounts};
pub use ranking::{mrr_at_k, ndcg_at_k, recall_at_k, RankedList, RankingMetrics};
pub use report::EvalReport;
pub use roc::{roc_auc, roc_curve, trapezoid_auc, write_roc_csv, RocPoint};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{expected} labels but {actual} predictions")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("no examples to evaluate")]
    Empty,
    #[error("ROC needs both classes; only {0} is present")]
    SingleClass(crate::data::Label),
    #[error("score at position {position} is not finite")]
    NonFinite { position: usize },
    #[error("no queries to evaluate")]
    EmptyQuerySet,
    #[error("query {query} has no relevant items")]
    NoRelevant { query: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid ranked list: {0}")]
    InvalidList(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;
