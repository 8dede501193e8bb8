use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::data::Label;

/// Counts with [`Label::Real`] as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_labels(labels: &[Label], predicted: &[Label]) -> Result<Self> {
        if labels.len() != predicted.len() {
            return Err(MetricsError::LengthMismatch {
                expected: labels.len(),
                actual: predicted.len(),
            });
        }
        if labels.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut c = Self::default();
        for (&y, &p) in labels.iter().zip(predicted) {
            match (y, p) {
                (Label::Real, Label::Real) => c.tp += 1,
                (Label::Fake, Label::Real) => c.fp += 1,
                (Label::Fake, Label::Fake) => c.tn += 1,
                (Label::Real, Label::Fake) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// The same counts with the fake class treated as positive.
    pub fn flipped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

/// Harmonic mean of precision and recall; `0` when both are `0`.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub real: ClassMetrics,
    pub fake: ClassMetrics,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub warnings: Vec<String>,
}

fn ratio(num: usize, den: usize, what: &str, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        warnings.push(format!("{what} is undefined (zero denominator), reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(c: &ConfusionCounts, class: Label, warnings: &mut Vec<String>) -> ClassMetrics {
    let precision = ratio(c.tp, c.tp + c.fp, &format!("precision[{class}]"), warnings);
    let recall = ratio(c.tp, c.tp + c.fn_, &format!("recall[{class}]"), warnings);
    ClassMetrics {
        precision,
        recall,
        f1: f1(precision, recall),
        support: c.tp + c.fn_,
    }
}

pub fn classification_metrics(labels: &[Label], predicted: &[Label]) -> Result<ClassificationReport> {
    let counts = ConfusionCounts::from_labels(labels, predicted)?;
    Ok(report_from_counts(counts))
}

/// Per-class, macro and support-weighted metrics from raw counts.
pub fn report_from_counts(counts: ConfusionCounts) -> ClassificationReport {
    let mut warnings = Vec::new();
    let real = class_metrics(&counts, Label::Real, &mut warnings);
    let fake = class_metrics(&counts.flipped(), Label::Fake, &mut warnings);
    let n = counts.total() as f64;
    let avg = |f: fn(&ClassMetrics) -> f64| (f(&real) + f(&fake)) / 2.0;
    let wavg = |f: fn(&ClassMetrics) -> f64| (f(&real) * real.support as f64 + f(&fake) * fake.support as f64) / n;
    ClassificationReport {
        counts,
        accuracy: counts.accuracy(),
        real,
        fake,
        macro_avg: Averages {
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            f1: avg(|m| m.f1),
        },
        weighted_avg: Averages {
            precision: wavg(|m| m.precision),
            recall: wavg(|m| m.recall),
            f1: wavg(|m| m.f1),
        },
        warnings,
    }
}
