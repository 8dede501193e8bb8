//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use ragclf::data::{Dataset, EmbeddingRecord};
use ragclf::linalg::Matrix;
use ragclf::nn::{bce_loss, Batch, ClassifierModel, Mode};
use ragclf::preprocess::ScalerParams;
use ragclf::rng::{stream, Stream};

pub const H: f64 = 1e-5;
pub const REL: f64 = 1e-4;
/// Absolute floor for gradients that are numerically zero.
pub const ABS: f64 = 1e-7;
pub const PER_TENSOR: usize = 24;

pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = stream(seed, Stream::Synthesize);
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn alternating_labels(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i % 2) as f64).collect()
}

/// Loss of one pass; dropout masks are redrawn from the same seed each call.
fn loss(model: &ClassifierModel, batch: Batch<'_>, mode: Mode, labels: &[f64]) -> f64 {
    let mut rng = stream(99, Stream::Dropout);
    let cache = model.forward(batch, mode, Some(&mut rng)).unwrap();
    bce_loss(cache.output(), labels).unwrap()
}

#[derive(Debug)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub checked: usize,
    /// Largest |analytic - numeric| / max(|analytic|, |numeric|) among
    /// entries whose gradient is above the absolute floor.
    pub max_rel: f64,
    /// Entries failing both the relative and absolute tolerance.
    pub failures: Vec<String>,
}

/// Compares backprop against central differences on a sample of every
/// trainable tensor (all entries when the tensor is small).
pub fn gradcheck(
    mut model: ClassifierModel,
    batch: Batch<'_>,
    mode: Mode,
    labels: &[f64],
    scaler: Option<&ScalerParams>,
) -> Vec<TensorCheck> {
    let mut rng = stream(99, Stream::Dropout);
    let cache = model.forward(batch, mode, Some(&mut rng)).unwrap();
    let grads = model.backward(&cache, labels, scaler).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, g)| (n, g.to_vec())).collect();
    let names: Vec<String> = model.trainable().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, analytic.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());

    let mut pick = stream(5, Stream::Grid);
    let mut out = Vec::new();
    for (t, (name, grad)) in analytic.iter().enumerate() {
        let len = grad.len();
        let idx = sample(&mut pick, len, len.min(PER_TENSOR)).into_vec();
        let mut check = TensorCheck {
            name: name.clone(),
            len,
            checked: idx.len(),
            max_rel: 0.0,
            failures: Vec::new(),
        };
        for i in idx {
            let orig = model.trainable()[t].1[i];
            model.trainable_mut()[t].1[i] = orig + H;
            let up = loss(&model, batch, mode, labels);
            model.trainable_mut()[t].1[i] = orig - H;
            let down = loss(&model, batch, mode, labels);
            model.trainable_mut()[t].1[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = grad[i];
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            if scale > ABS {
                check.max_rel = check.max_rel.max(err / scale);
            }
            if err > (REL * scale).max(ABS) {
                check.failures.push(format!("{name}[{i}]: analytic {a:e} numeric {numeric:e}"));
            }
        }
        out.push(check);
    }
    out
}

/// Replaces the vectors of the given records with unrelated noise, keeping
/// ids, labels and order.
pub fn perturb(dataset: &Dataset, which: &[String], seed: u64) -> Dataset {
    let mut rng = stream(seed, Stream::Synthesize);
    let records: Vec<EmbeddingRecord> = dataset
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if which.contains(&r.article_id) {
                let noise: Vec<f32> = (0..r.vector.dim())
                    .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 10.0 * z as f32 })
                    .collect();
                r.vector = ragclf::DenseVector::new(noise).unwrap();
            }
            r
        })
        .collect();
    Dataset::new(records).unwrap()
}
