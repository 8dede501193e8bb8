use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};

/// One query's ranked candidates with binary relevance marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    ids: Vec<String>,
    relevant: Vec<bool>,
    /// Relevant items in the query's whole candidate universe, which may
    /// exceed the number marked in `ids`.
    total_relevant: usize,
}

impl RankedList {
    pub fn new(ids: Vec<String>, relevant: Vec<bool>, total_relevant: usize) -> Result<Self> {
        if ids.len() != relevant.len() {
            return Err(MetricsError::InvalidList(format!(
                "{} ids but {} relevance marks",
                ids.len(),
                relevant.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(MetricsError::InvalidList(format!("duplicate id {dup}")));
        }
        let marked = relevant.iter().filter(|&&r| r).count();
        if total_relevant < marked {
            return Err(MetricsError::InvalidList(format!(
                "{marked} relevant items listed but total_relevant is {total_relevant}"
            )));
        }
        Ok(Self {
            ids,
            relevant,
            total_relevant,
        })
    }

    /// A list whose relevant items are exactly those marked.
    pub fn from_marks(ids: Vec<String>, relevant: Vec<bool>) -> Result<Self> {
        let total = relevant.iter().filter(|&&r| r).count();
        Self::new(ids, relevant, total)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn relevant(&self) -> &[bool] {
        &self.relevant
    }

    pub fn total_relevant(&self) -> usize {
        self.total_relevant
    }

    fn top(&self, k: usize) -> &[bool] {
        &self.relevant[..k.min(self.relevant.len())]
    }
}

fn check(lists: &[RankedList], k: usize) -> Result<()> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if lists.is_empty() {
        return Err(MetricsError::EmptyQuerySet);
    }
    Ok(())
}

fn mean(lists: &[RankedList], f: impl Fn(&RankedList) -> f64) -> f64 {
    lists.iter().map(f).sum::<f64>() / lists.len() as f64
}

pub fn mrr_at_k(lists: &[RankedList], k: usize) -> Result<f64> {
    check(lists, k)?;
    Ok(mean(lists, |l| {
        l.top(k).iter().position(|&r| r).map_or(0.0, |p| 1.0 / (p + 1) as f64)
    }))
}

pub fn recall_at_k(lists: &[RankedList], k: usize) -> Result<f64> {
    check(lists, k)?;
    if let Some(query) = lists.iter().position(|l| l.total_relevant == 0) {
        return Err(MetricsError::NoRelevant { query });
    }
    Ok(mean(lists, |l| {
        l.top(k).iter().filter(|&&r| r).count() as f64 / l.total_relevant as f64
    }))
}

fn discount(rank0: usize) -> f64 {
    1.0 / ((rank0 + 2) as f64).log2()
}

/// Binary-gain nDCG; the ideal ranking puts `min(total_relevant, k)` relevant
/// items first.
pub fn ndcg_at_k(lists: &[RankedList], k: usize) -> Result<f64> {
    check(lists, k)?;
    Ok(mean(lists, |l| {
        let ideal: f64 = (0..l.total_relevant.min(k)).map(discount).sum();
        if ideal == 0.0 {
            return 0.0;
        }
        let dcg: f64 = l.top(k).iter().enumerate().filter(|(_, &r)| r).map(|(i, _)| discount(i)).sum();
        dcg / ideal
    }))
}

/// MRR, recall and nDCG at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub k: usize,
    pub mrr: f64,
    pub recall: f64,
    pub ndcg: f64,
}

impl RankingMetrics {
    pub fn compute(lists: &[RankedList], k: usize) -> Result<Self> {
        Ok(Self {
            k,
            mrr: mrr_at_k(lists, k)?,
            recall: recall_at_k(lists, k)?,
            ndcg: ndcg_at_k(lists, k)?,
        })
    }
}
