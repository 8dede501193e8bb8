//! Dense, batch-norm and dropout building blocks.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{round_f32, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseParams {
    /// He-normal weights (variance `2 / fan_in`), zero bias. Values are
    /// rounded to `f32` so a checkpoint reproduces them exactly.
    pub fn he_init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                round_f32(z * std)
            })
            .collect();
        Self {
            weight: Matrix::from_vec(fan_out, fan_in, data),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        self.weight.affine_rows(x, &self.bias)
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Values kept from a train-mode batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Biased batch variance.
    pub batch_var: Vec<f64>,
}

impl BatchNormParams {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with batch statistics.
    pub fn forward_train(&self, x: &Matrix) -> (Matrix, BatchNormCache) {
        let n = x.rows() as f64;
        let mean: Vec<f64> = x.sum_rows().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; x.cols()];
        for r in x.iter_rows() {
            for ((acc, &v), m) in var.iter_mut().zip(r).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut normalized = x.clone();
        let mut out = x.clone();
        for r in 0..x.rows() {
            let xh = normalized.row_mut(r);
            for (j, v) in xh.iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
            let xh = normalized.row(r).to_vec();
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = self.gamma[j] * xh[j] + self.beta[j];
            }
        }
        (
            out,
            BatchNormCache {
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        )
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                let xh = (*v - self.running_mean[j]) / (self.running_var[j] + self.eps).sqrt();
                *v = self.gamma[j] * xh + self.beta[j];
            }
        }
        out
    }

    /// Returns `(∂L/∂x, ∂L/∂γ, ∂L/∂β)`.
    pub fn backward(&self, cache: &BatchNormCache, upstream: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
        let n = upstream.rows() as f64;
        let width = self.width();
        let mut dgamma = vec![0.0; width];
        let mut dbeta = vec![0.0; width];
        for (g, xh) in upstream.iter_rows().zip(cache.normalized.iter_rows()) {
            for j in 0..width {
                dgamma[j] += g[j] * xh[j];
                dbeta[j] += g[j];
            }
        }
        // dx = γ·inv_std/N · (N·g − Σg − x̂·Σ(g·x̂))
        let mut dx = Matrix::zeros(upstream.rows(), width);
        for r in 0..upstream.rows() {
            let g = upstream.row(r);
            let xh = cache.normalized.row(r);
            for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                *d = self.gamma[j] * cache.inv_std[j] / n * (n * g[j] - dbeta[j] - xh[j] * dgamma[j]);
            }
        }
        (dx, dgamma, dbeta)
    }

    /// Exponential moving update with the unbiased batch variance.
    pub fn update_running(&mut self, cache: &BatchNormCache, batch_size: usize) {
        let m = self.momentum;
        let correction = if batch_size > 1 {
            batch_size as f64 / (batch_size - 1) as f64
        } else {
            1.0
        };
        for j in 0..self.width() {
            self.running_mean[j] = round_f32((1.0 - m) * self.running_mean[j] + m * cache.batch_mean[j]);
            self.running_var[j] = round_f32((1.0 - m) * self.running_var[j] + m * cache.batch_var[j] * correction);
        }
    }
}

pub fn relu_in_place(x: &mut Matrix) {
    for v in x.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Inverted dropout mask: entries are `0` with probability `p`, otherwise
/// `1 / (1 - p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Matrix::from_vec(rows, cols, data)
}
