use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::data::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `≥ threshold` are called positive. The first point uses `+∞`.
    pub threshold: f64,
}

fn check(labels: &[Label], scores: &[f64]) -> Result<(usize, usize)> {
    if labels.len() != scores.len() {
        return Err(MetricsError::LengthMismatch {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(position) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite { position });
    }
    let pos = labels.iter().filter(|&&l| l == Label::Real).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(MetricsError::SingleClass(Label::Fake));
    }
    if neg == 0 {
        return Err(MetricsError::SingleClass(Label::Real));
    }
    Ok((pos, neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counted ½. Computed from midranks in `O(n log n)`.
pub fn roc_auc(labels: &[Label], scores: &[f64]) -> Result<f64> {
    let (pos, neg) = check(labels, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&o| labels[o] == Label::Real).count();
        rank_sum += midrank * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC points from `(0, 0)` to `(1, 1)`, one per distinct score.
pub fn roc_curve(labels: &[Label], scores: &[f64]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check(labels, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == Label::Real {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    Ok(out)
}

pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// CSV with header `threshold,fpr,tpr`.
pub fn write_roc_csv<W: Write>(points: &[RocPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "threshold,fpr,tpr")?;
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng as _;

    use Label::{Fake as F, Real as R};

    #[test]
    fn separated_and_tied() {
        assert_eq!(roc_auc(&[F, F, R, R], &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[F, F, R, R], &[0.9, 0.8, 0.2, 0.1]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[F, R, F, R], &[0.5; 4]).unwrap(), 0.5);
    }

    #[test]
    fn curve_endpoints() {
        let pts = roc_curve(&[F, R, F, R], &[0.1, 0.3, 0.35, 0.8]).unwrap();
        assert_eq!(pts.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(pts.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        assert_eq!(trapezoid_auc(&pts), 0.75);
        let mut buf = Vec::new();
        write_roc_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("threshold,fpr,tpr\ninf,0,0\n0.8,0,0.5\n"));
    }

    #[test]
    fn rank_form_equals_trapezoid() {
        let mut rng = stream(11, Stream::Grid);
        for _ in 0..20 {
            let labels: Vec<Label> = (0..200).map(|_| if rng.random_bool(0.5) { R } else { F }).collect();
            // coarse scores force plenty of ties
            let scores: Vec<f64> = (0..200).map(|_| (rng.random_range(0..30) as f64) / 7.0).collect();
            let a = roc_auc(&labels, &scores).unwrap();
            let b = trapezoid_auc(&roc_curve(&labels, &scores).unwrap());
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(roc_auc(&[R, R], &[0.1, 0.2]), Err(MetricsError::SingleClass(Label::Real))));
        assert!(matches!(roc_auc(&[R, F], &[0.1, f64::NAN]), Err(MetricsError::NonFinite { position: 1 })));
        assert!(matches!(roc_curve(&[], &[]), Err(MetricsError::Empty)));
    }
}
