//! Browser demo. Each operation has a plain Rust function that the tests call
//! and a `wasm_bindgen` wrapper that returns JSON to the page.

use ragclf::data::{synthesize, Label};
use ragclf::metrics::RocPoint;
use ragclf::nn::{attention_apply, AttentionParams, Variant};
use ragclf::pipeline::commands::split_dataset;
use ragclf::pipeline::{PipelineConfig, Relevance, TrainedRun};
use ragclf::rng::{stream, Stream};
use ragclf::{DenseVector, FlatIndex, Matrix};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Point {
    pub id: String,
    pub label: Label,
    pub x: f32,
    pub y: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbour {
    pub id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighbourView {
    pub points: Vec<Point>,
    pub neighbours: Vec<Neighbour>,
}

/// Two Gaussian clouds in the plane and the `k` stored points nearest to
/// `(qx, qy)`. Only real points are indexed, as in training.
pub fn nearest_neighbours(
    seed: u64,
    per_class: usize,
    separation: f64,
    qx: f32,
    qy: f32,
    k: usize,
) -> Result<NeighbourView, String> {
    let ds = synthesize(seed, per_class, per_class, 2, separation).map_err(|e| e.to_string())?;
    let points = ds
        .records()
        .iter()
        .map(|r| Point {
            id: r.article_id.clone(),
            label: r.label,
            x: r.vector.as_slice()[0],
            y: r.vector.as_slice()[1],
        })
        .collect();
    let reals = ds.with_label(Label::Real).map(|r| (r.article_id.clone(), r.vector.clone()));
    let index = FlatIndex::build(reals, 2).map_err(|e| e.to_string())?;
    let query = DenseVector::new(vec![qx, qy]).map_err(|e| e.to_string())?;
    let hits = index.search(query.as_slice(), k, None).map_err(|e| e.to_string())?;
    Ok(NeighbourView {
        points,
        neighbours: hits
            .hits
            .into_iter()
            .map(|h| Neighbour {
                id: h.id,
                distance: h.distance,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocView {
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub roc: Vec<RocPoint>,
    pub test_size: usize,
}

/// Trains a small ModelI on synthetic data with the given class separation
/// and returns its held-out ROC curve.
pub fn roc_for_separation(seed: u64, separation: f64, dim: usize, epochs: usize) -> Result<RocView, String> {
    let cfg = PipelineConfig {
        variant: Variant::ModelI,
        include_cosines: true,
        epochs,
        seed,
        ..PipelineConfig::synthetic(150, 150, dim, separation)
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let (train, test) = split_dataset(&cfg).map_err(|e| e.to_string())?;
    let run = TrainedRun::fit(&cfg, &train).map_err(|e| e.to_string())?;
    let relevance = Relevance::from_config(&cfg, &train).map_err(|e| e.to_string())?;
    let eval = run.evaluate(test.records(), &relevance, &[10]).map_err(|e| e.to_string())?;
    Ok(RocView {
        accuracy: eval.report.accuracy,
        auc: eval.report.auc,
        roc: eval.roc.unwrap_or_default(),
        test_size: test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateView {
    pub gates: Vec<f64>,
    pub refined: Vec<f64>,
}

/// Softmax gates for embedding `e` under a random `W_a` scaled by `scale`.
/// At scale 0 every gate is `1/d`.
pub fn attention_gates(e: &[f64], scale: f64, seed: u64) -> Result<GateView, String> {
    let d = e.len();
    if d == 0 {
        return Err("embedding is empty".into());
    }
    if !scale.is_finite() || e.iter().any(|v| !v.is_finite()) {
        return Err("inputs must be finite".into());
    }
    let mut w = normal_matrix(d, d, seed);
    for v in w.as_mut_slice() {
        *v *= scale;
    }
    let out = attention_apply(&AttentionParams { weights: w }, e).map_err(|e| e.to_string())?;
    Ok(GateView {
        gates: out.gates,
        refined: out.refined,
    })
}

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = stream(seed, Stream::Init);
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("view serializes"))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = nearestNeighbours)]
pub fn nearest_neighbours_js(
    seed: u32,
    per_class: u32,
    separation: f64,
    qx: f32,
    qy: f32,
    k: u32,
) -> Result<String, JsValue> {
    to_js(nearest_neighbours(u64::from(seed), per_class as usize, separation, qx, qy, k as usize))
}

#[wasm_bindgen(js_name = rocForSeparation)]
pub fn roc_for_separation_js(seed: u32, separation: f64, dim: u32, epochs: u32) -> Result<String, JsValue> {
    to_js(roc_for_separation(u64::from(seed), separation, dim as usize, epochs as usize))
}

#[wasm_bindgen(js_name = attentionGates)]
pub fn attention_gates_js(e: Vec<f64>, scale: f64, seed: u32) -> Result<String, JsValue> {
    to_js(attention_gates(&e, scale, u64::from(seed)))
}
