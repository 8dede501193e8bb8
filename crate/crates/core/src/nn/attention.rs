//! Per-dimension attention gates: `a = softmax(W_a e)`, `ẽ = a ⊙ e`.

use serde::{Deserialize, Serialize};

use super::{NnError, Result};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// `d × d`, row `i` produces the logit of gate `i`.
    pub weights: Matrix,
}

impl AttentionParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub gates: Vec<f64>,
    pub refined: Vec<f64>,
}

pub fn attention_apply(params: &AttentionParams, e: &[f64]) -> Result<AttentionOutput> {
    if e.len() != params.dim() {
        return Err(NnError::DimensionMismatch {
            expected: params.dim(),
            actual: e.len(),
        });
    }
    let logits: Vec<f64> = params.weights.iter_rows().map(|w| dot(w, e)).collect();
    let gates = softmax(&logits);
    let refined = gates.iter().zip(e).map(|(a, x)| a * x).collect();
    Ok(AttentionOutput { gates, refined })
}

/// Accumulates `∂L/∂W_a` given `upstream = ∂L/∂ẽ` for one embedding.
pub(crate) fn attention_backward(e: &[f64], gates: &[f64], upstream: &[f64], grad: &mut Matrix) {
    // ∂L/∂a_i = g_i e_i, then through the softmax Jacobian
    let ga: Vec<f64> = upstream.iter().zip(e).map(|(g, x)| g * x).collect();
    let mean = dot(gates, &ga);
    for (i, (&a, &g)) in gates.iter().zip(&ga).enumerate() {
        let dz = a * (g - mean);
        if dz == 0.0 {
            continue;
        }
        for (acc, &x) in grad.row_mut(i).iter_mut().zip(e) {
            *acc += dz * x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_uniform_gates() {
        let out = attention_apply(&AttentionParams::zeros(2), &[2.0, 4.0]).unwrap();
        assert_eq!(out.gates, vec![0.5, 0.5]);
        assert_eq!(out.refined, vec![1.0, 2.0]);
    }

    #[test]
    fn zero_embedding_is_fixed_point() {
        let params = AttentionParams {
            weights: Matrix::from_vec(3, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0, -1.0, 2.0, 2.0]),
        };
        let out = attention_apply(&params, &[0.0; 3]).unwrap();
        for g in &out.gates {
            assert!((g - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(out.refined, vec![0.0; 3]);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let g = softmax(&[1000.0, -1000.0, 999.0]);
        assert!(g.iter().all(|v| v.is_finite()));
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_checked() {
        assert!(matches!(
            attention_apply(&AttentionParams::zeros(2), &[1.0]),
            Err(NnError::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }
}
