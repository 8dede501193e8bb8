use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::classification::ClassificationReport;
use super::ranking::RankingMetrics;

/// Flat, JSON-friendly evaluation summary. Precision/recall/F1 without a
/// suffix refer to the real (positive) class; ranking metrics are keyed
/// `mrr@k`, `recall@k`, `ndcg@k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support_real: usize,
    pub precision_fake: f64,
    pub recall_fake: f64,
    pub f1_fake: f64,
    pub support_fake: usize,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub ranking_queries: usize,
    pub ranking: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn new(c: &ClassificationReport, auc: Option<f64>, ranking: &[RankingMetrics], ranking_queries: usize) -> Self {
        let mut map = BTreeMap::new();
        for r in ranking {
            map.insert(format!("mrr@{}", r.k), r.mrr);
            map.insert(format!("recall@{}", r.k), r.recall);
            map.insert(format!("ndcg@{}", r.k), r.ndcg);
        }
        Self {
            n: c.counts.total(),
            accuracy: c.accuracy,
            precision: c.real.precision,
            recall: c.real.recall,
            f1: c.real.f1,
            auc,
            tp: c.counts.tp,
            fp: c.counts.fp,
            tn: c.counts.tn,
            fn_: c.counts.fn_,
            support_real: c.real.support,
            precision_fake: c.fake.precision,
            recall_fake: c.fake.recall,
            f1_fake: c.fake.f1,
            support_fake: c.fake.support,
            macro_precision: c.macro_avg.precision,
            macro_recall: c.macro_avg.recall,
            macro_f1: c.macro_avg.f1,
            weighted_precision: c.weighted_avg.precision,
            weighted_recall: c.weighted_avg.recall,
            weighted_f1: c.weighted_avg.f1,
            ranking_queries,
            ranking: map,
            warnings: c.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Classification-report style table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14}{:>10}{:>10}{:>10}{:>10}", "", "precision", "recall", "f1", "support");
        let rows = [
            ("fake", self.precision_fake, self.recall_fake, self.f1_fake, self.support_fake),
            ("real", self.precision, self.recall, self.f1, self.support_real),
        ];
        for (name, p, r, f, n) in rows {
            let _ = writeln!(s, "{name:<14}{p:>10.4}{r:>10.4}{f:>10.4}{n:>10}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<14}{:>30.4}{:>10}", "accuracy", self.accuracy, self.n);
        let _ = writeln!(
            s,
            "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>10}",
            "macro avg", self.macro_precision, self.macro_recall, self.macro_f1, self.n
        );
        let _ = writeln!(
            s,
            "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>10}",
            "weighted avg", self.weighted_precision, self.weighted_recall, self.weighted_f1, self.n
        );
        if let Some(auc) = self.auc {
            let _ = writeln!(s, "{:<14}{:>30.4}", "roc auc", auc);
        }
        let _ = writeln!(s, "confusion     tp={} fp={} tn={} fn={}", self.tp, self.fp, self.tn, self.fn_);
        if !self.ranking.is_empty() {
            let _ = writeln!(s, "\nranking ({} queries)", self.ranking_queries);
            for (key, v) in &self.ranking {
                let _ = writeln!(s, "{key:<14}{v:>10.4}");
            }
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}
