use serde::{Deserialize, Serialize};

use super::attention::AttentionParams;
use super::layers::{dropout_mask, relu_in_place, BatchNormCache, BatchNormParams, DenseParams};
use super::loss::sigmoid;
use super::retrieval::{self, RetrievalBatch, RetrievalCache};
use super::{NnError, Result};
use crate::linalg::{round_f32, Matrix};
use crate::preprocess::{feature_width, ScalerParams};
use crate::rng::Rng;

/// Hidden widths 128/64.
pub const WIDE: [usize; 2] = [128, 64];
/// Hidden widths 64/32.
pub const NARROW: [usize; 2] = [64, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "model1", alias = "model_i", alias = "ModelI")]
    ModelI,
    #[serde(rename = "model2", alias = "model_ii", alias = "ModelII")]
    ModelII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active.
    Train,
    /// Running statistics, dropout is the identity.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub k: usize,
    pub with_cosines: bool,
    pub hidden: [usize; 2],
    pub dropout_p: f64,
    pub batchnorm: bool,
    /// Embedding width for the attention gate; `None` disables attention.
    pub attention_dim: Option<usize>,
}

impl ModelSpec {
    /// Plain ReLU stack, no batch norm, dropout or attention.
    pub fn model_i(k: usize, with_cosines: bool) -> Self {
        Self {
            variant: Variant::ModelI,
            k,
            with_cosines,
            hidden: WIDE,
            dropout_p: 0.0,
            batchnorm: false,
            attention_dim: None,
        }
    }

    /// Batch norm and dropout 0.5 on both hidden layers, optional attention.
    pub fn model_ii(k: usize, with_cosines: bool, attention_dim: Option<usize>) -> Self {
        Self {
            variant: Variant::ModelII,
            k,
            with_cosines,
            hidden: WIDE,
            dropout_p: 0.5,
            batchnorm: true,
            attention_dim,
        }
    }

    pub fn with_hidden(mut self, hidden: [usize; 2]) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    pub fn input_width(&self) -> usize {
        feature_width(self.k, self.with_cosines)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout probability must be in [0, 1)");
        }
        if self.variant == Variant::ModelI && self.attention_dim.is_some() {
            return bad("ModelI has no attention layer");
        }
        if self.attention_dim == Some(0) {
            return bad("attention dimension must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub variant: Variant,
    pub k: usize,
    pub with_cosines: bool,
    pub attention: Option<AttentionParams>,
    /// Two hidden layers followed by the single-unit output layer.
    pub layers: Vec<DenseParams>,
    /// One entry per hidden layer when present.
    pub batchnorm: Option<Vec<BatchNormParams>>,
    pub dropout_p: f64,
}

/// Model input for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    /// Standardized feature rows.
    Features(&'a Matrix),
    /// Raw embeddings and their neighbours; features are computed (through
    /// the attention gate, if any) and standardized with `scaler`.
    Retrieval {
        batch: &'a RetrievalBatch,
        scaler: &'a ScalerParams,
    },
}

impl Batch<'_> {
    pub fn rows(&self) -> usize {
        match self {
            Batch::Features(x) => x.rows(),
            Batch::Retrieval { batch, .. } => batch.len(),
        }
    }
}

#[derive(Debug, Clone)]
struct HiddenCache {
    pre: Matrix,
    bn: Option<BatchNormCache>,
    activated: Matrix,
    mask: Option<Matrix>,
    out: Matrix,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Matrix,
    hidden: Vec<HiddenCache>,
    pub logits: Vec<f64>,
    pub output: Vec<f64>,
}

impl HeadCache {
    /// Batch-norm outputs (before ReLU) of hidden layer `layer`, if the layer
    /// ran batch norm in train mode.
    pub fn normalized(&self, layer: usize) -> Option<&Matrix> {
        self.hidden[layer].bn.as_ref().map(|c| &c.normalized)
    }

    /// Dense pre-activations of hidden layer `layer`.
    pub fn pre_activation(&self, layer: usize) -> &Matrix {
        &self.hidden[layer].pre
    }

    /// Output of hidden layer `layer` after dropout.
    pub fn hidden_output(&self, layer: usize) -> &Matrix {
        &self.hidden[layer].out
    }
}

/// Intermediate values of one forward pass, consumed by
/// [`ClassifierModel::backward`]. Dropout masks live here so the backward pass
/// of a step sees exactly the masks its forward pass drew.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) retrieval: Option<RetrievalCache>,
    pub head: HeadCache,
    mode: Mode,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.head.output
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub attention: Option<Matrix>,
    pub layers: Vec<(Matrix, Vec<f64>)>,
    pub batchnorm: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl Gradients {
    /// Same order and names as [`ClassifierModel::trainable`].
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        if let Some(a) = &self.attention {
            out.push(("attention.weight".into(), a.as_slice()));
        }
        for (i, (w, b)) in self.layers.iter().enumerate() {
            out.push((format!("dense{}.weight", i + 1), w.as_slice()));
            out.push((format!("dense{}.bias", i + 1), b));
            if let Some((g, be)) = self.batchnorm.as_ref().and_then(|bn| bn.get(i)) {
                out.push((format!("bn{}.gamma", i + 1), g));
                out.push((format!("bn{}.beta", i + 1), be));
            }
        }
        out
    }
}

impl ClassifierModel {
    pub fn new(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let widths = [spec.input_width(), spec.hidden[0], spec.hidden[1], 1];
        let layers = widths
            .windows(2)
            .map(|w| DenseParams::he_init(w[0], w[1], rng))
            .collect();
        Ok(Self {
            variant: spec.variant,
            k: spec.k,
            with_cosines: spec.with_cosines,
            attention: spec.attention_dim.map(AttentionParams::zeros),
            layers,
            batchnorm: spec
                .batchnorm
                .then(|| spec.hidden.iter().map(|&w| BatchNormParams::new(w)).collect()),
            dropout_p: spec.dropout_p,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            variant: self.variant,
            k: self.k,
            with_cosines: self.with_cosines,
            hidden: [self.layers[0].fan_out(), self.layers[1].fan_out()],
            dropout_p: self.dropout_p,
            batchnorm: self.batchnorm.is_some(),
            attention_dim: self.attention.as_ref().map(AttentionParams::dim),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    /// Trainable tensors in declaration order.
    pub fn trainable(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        if let Some(a) = &self.attention {
            out.push(("attention.weight".into(), a.weights.as_slice()));
        }
        for (i, d) in self.layers.iter().enumerate() {
            out.push((format!("dense{}.weight", i + 1), d.weight.as_slice()));
            out.push((format!("dense{}.bias", i + 1), &d.bias));
            if let Some(bn) = self.batchnorm.as_ref().and_then(|bn| bn.get(i)) {
                out.push((format!("bn{}.gamma", i + 1), &bn.gamma));
                out.push((format!("bn{}.beta", i + 1), &bn.beta));
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        if let Some(a) = &mut self.attention {
            out.push(("attention.weight".into(), a.weights.as_mut_slice()));
        }
        let mut bns = self.batchnorm.as_mut().map(|v| v.iter_mut());
        for (i, d) in self.layers.iter_mut().enumerate() {
            out.push((format!("dense{}.weight", i + 1), d.weight.as_mut_slice()));
            out.push((format!("dense{}.bias", i + 1), &mut d.bias));
            if let Some(bn) = bns.as_mut().and_then(Iterator::next) {
                out.push((format!("bn{}.gamma", i + 1), &mut bn.gamma));
                out.push((format!("bn{}.beta", i + 1), &mut bn.beta));
            }
        }
        out
    }

    /// `θ ← θ − η ∇θ`, rounded to `f32` precision.
    pub fn apply_sgd(&mut self, grads: &Gradients, learning_rate: f64) {
        let g = grads.tensors();
        for ((name, p), (gname, gv)) in self.trainable_mut().into_iter().zip(g) {
            debug_assert_eq!(name, gname);
            for (x, d) in p.iter_mut().zip(gv) {
                *x = round_f32(*x - learning_rate * d);
            }
        }
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// batch-norm statistics.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let n = cache.head.input.rows();
        if let Some(bns) = &mut self.batchnorm {
            for (bn, h) in bns.iter_mut().zip(&cache.head.hidden) {
                if let Some(c) = &h.bn {
                    bn.update_running(c, n);
                }
            }
        }
    }

    fn forward_head(&self, x: Matrix, mode: Mode, mut rng: Option<&mut Rng>) -> Result<HeadCache> {
        if x.cols() != self.input_width() {
            return Err(NnError::WidthMismatch {
                expected: self.input_width(),
                actual: x.cols(),
            });
        }
        let use_dropout = mode == Mode::Train && self.dropout_p > 0.0;
        if use_dropout && rng.is_none() {
            return Err(NnError::MissingRng);
        }
        let mut hidden: Vec<HiddenCache> = Vec::with_capacity(2);
        for (l, dense) in self.layers[..2].iter().enumerate() {
            let input: &Matrix = if l == 0 { &x } else { &hidden[0].out };
            let pre = dense.forward(input);
            let (mut activated, bn) = match self.batchnorm.as_ref().map(|b| &b[l]) {
                Some(bn) if mode == Mode::Train => {
                    let (y, c) = bn.forward_train(&pre);
                    (y, Some(c))
                }
                Some(bn) => (bn.forward_eval(&pre), None),
                None => (pre.clone(), None),
            };
            relu_in_place(&mut activated);
            let (out, mask) = if use_dropout {
                let r = rng.as_deref_mut().expect("checked above");
                let mask = dropout_mask(activated.rows(), activated.cols(), self.dropout_p, r);
                let mut out = activated.clone();
                for (o, m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *o *= m;
                }
                (out, Some(mask))
            } else {
                (activated.clone(), None)
            };
            hidden.push(HiddenCache {
                pre,
                bn,
                activated,
                mask,
                out,
            });
        }
        let last = &hidden[1].out;
        let logits: Vec<f64> = self.layers[2].forward(last).as_slice().to_vec();
        let output = logits.iter().map(|&z| sigmoid(z)).collect();
        Ok(HeadCache {
            input: x,
            hidden,
            logits,
            output,
        })
    }

    /// Runs the network. `rng` drives dropout masks and is required in
    /// [`Mode::Train`] when `dropout_p > 0`.
    pub fn forward(&self, batch: Batch<'_>, mode: Mode, rng: Option<&mut Rng>) -> Result<ForwardCache> {
        let (features, retrieval) = match batch {
            Batch::Features(x) => {
                if self.attention.is_some() {
                    return Err(NnError::NeedsEmbeddings);
                }
                (x.clone(), None)
            }
            Batch::Retrieval { batch, scaler } => {
                let (raw, cache) = retrieval::forward(self.attention.as_ref(), batch, self.k, self.with_cosines)?;
                (crate::preprocess::transform(scaler, &raw)?, Some(cache))
            }
        };
        let head = self.forward_head(features, mode, rng)?;
        Ok(ForwardCache {
            retrieval,
            head,
            mode,
        })
    }

    /// Eval-mode scores `ŷ`.
    pub fn scores(&self, batch: Batch<'_>) -> Result<Vec<f64>> {
        Ok(self.forward(batch, Mode::Eval, None)?.head.output)
    }

    /// Exact gradients of the mean BCE loss of `cache`'s pass with respect to
    /// every trainable parameter. `scaler` must be the one used in the
    /// forward pass when the batch was a retrieval batch.
    pub fn backward(&self, cache: &ForwardCache, labels: &[f64], scaler: Option<&ScalerParams>) -> Result<Gradients> {
        let head = &cache.head;
        let n = head.output.len();
        if labels.len() != n {
            return Err(NnError::LengthMismatch {
                expected: n,
                actual: labels.len(),
            });
        }
        if n == 0 {
            return Err(NnError::EmptyTrainingSet);
        }
        // ∂L/∂z for σ followed by mean BCE
        let dlogits: Vec<f64> = head
            .output
            .iter()
            .zip(labels)
            .map(|(p, y)| (p - y) / n as f64)
            .collect();

        let mut layer_grads: Vec<(Matrix, Vec<f64>)> = vec![(Matrix::zeros(0, 0), Vec::new()); 3];
        let mut bn_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();

        let d_out = Matrix::from_vec(n, 1, dlogits);
        layer_grads[2] = (Matrix::outer_sum(&d_out, &head.hidden[1].out), d_out.sum_rows());
        let mut upstream = self.layers[2].weight.left_mul_rows(&d_out);

        for l in (0..2).rev() {
            let h = &head.hidden[l];
            if let Some(mask) = &h.mask {
                for (u, m) in upstream.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *u *= m;
                }
            }
            for (u, a) in upstream.as_mut_slice().iter_mut().zip(h.activated.as_slice()) {
                if *a <= 0.0 {
                    *u = 0.0;
                }
            }
            let d_pre = match self.batchnorm.as_ref().map(|b| &b[l]) {
                Some(bn) => {
                    let (dx, dg, db) = match &h.bn {
                        Some(c) => bn.backward(c, &upstream),
                        None => eval_bn_backward(bn, &h.pre, &upstream),
                    };
                    bn_grads.push((dg, db));
                    dx
                }
                None => upstream,
            };
            let input = if l == 0 { &head.input } else { &head.hidden[0].out };
            layer_grads[l] = (Matrix::outer_sum(&d_pre, input), d_pre.sum_rows());
            upstream = self.layers[l].weight.left_mul_rows(&d_pre);
        }
        bn_grads.reverse();

        let attention = match (&self.attention, &cache.retrieval) {
            (Some(att), Some(rc)) => {
                let scaler = scaler.ok_or_else(|| NnError::InvalidConfig("retrieval backward needs the feature scaler".into()))?;
                Some(retrieval::backward(att, rc, &upstream, scaler, self.with_cosines))
            }
            (Some(_), None) => return Err(NnError::NeedsEmbeddings),
            (None, _) => None,
        };
        Ok(Gradients {
            attention,
            layers: layer_grads,
            batchnorm: self.batchnorm.as_ref().map(|_| bn_grads),
        })
    }
}

/// Batch norm with frozen running statistics is an affine map.
fn eval_bn_backward(bn: &BatchNormParams, pre: &Matrix, upstream: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
    let w = bn.width();
    let inv: Vec<f64> = bn.running_var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
    let mut dx = upstream.clone();
    let mut dg = vec![0.0; w];
    let mut db = vec![0.0; w];
    for r in 0..upstream.rows() {
        let g = upstream.row(r);
        let x = pre.row(r);
        for j in 0..w {
            dg[j] += g[j] * (x[j] - bn.running_mean[j]) * inv[j];
            db[j] += g[j];
        }
        for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
            *d *= bn.gamma[j] * inv[j];
        }
    }
    (dx, dg, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn zero_model(spec: &ModelSpec) -> ClassifierModel {
        let mut m = ClassifierModel::new(spec, &mut stream(0, Stream::Init)).unwrap();
        for (_, t) in m.trainable_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        m
    }

    #[test]
    fn zero_weights_output_half() {
        let x = Matrix::from_vec(3, 5, (0..15).map(f64::from).collect());
        for spec in [ModelSpec::model_i(5, false), ModelSpec::model_ii(5, false, None)] {
            let m = zero_model(&spec);
            let y = m.scores(Batch::Features(&x)).unwrap();
            assert_eq!(y, vec![0.5; 3]);
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let m = ClassifierModel::new(&ModelSpec::model_ii(5, false, None), &mut stream(1, Stream::Init)).unwrap();
        let x = Matrix::from_vec(2, 5, vec![0.3, -1.0, 2.0, 0.1, 0.0, 1.0, 1.0, -0.5, 0.2, 3.0]);
        assert_eq!(m.scores(Batch::Features(&x)).unwrap(), m.scores(Batch::Features(&x)).unwrap());
    }

    #[test]
    fn width_and_rng_checks() {
        let m = ClassifierModel::new(&ModelSpec::model_ii(5, false, None), &mut stream(1, Stream::Init)).unwrap();
        let bad = Matrix::zeros(2, 4);
        assert!(matches!(
            m.scores(Batch::Features(&bad)),
            Err(NnError::WidthMismatch { expected: 5, actual: 4 })
        ));
        let x = Matrix::zeros(2, 5);
        assert!(matches!(
            m.forward(Batch::Features(&x), Mode::Train, None),
            Err(NnError::MissingRng)
        ));
        let att = ClassifierModel::new(&ModelSpec::model_ii(5, false, Some(3)), &mut stream(1, Stream::Init)).unwrap();
        assert!(matches!(att.scores(Batch::Features(&x)), Err(NnError::NeedsEmbeddings)));
    }

    #[test]
    fn spec_validation() {
        let mut s = ModelSpec::model_i(5, false);
        s.attention_dim = Some(4);
        assert!(s.validate().is_err());
        assert!(ModelSpec::model_ii(0, false, None).validate().is_err());
        assert!(ModelSpec::model_ii(5, false, None).with_dropout(1.0).validate().is_err());
        assert!(ModelSpec::model_ii(5, true, Some(8)).with_hidden(NARROW).validate().is_ok());
    }

    #[test]
    fn spec_round_trips_through_model() {
        let spec = ModelSpec::model_ii(3, true, Some(6)).with_hidden(NARROW);
        let m = ClassifierModel::new(&spec, &mut stream(2, Stream::Init)).unwrap();
        assert_eq!(m.spec(), spec);
        assert_eq!(m.input_width(), 6);
        let names: Vec<String> = m.trainable().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "attention.weight");
        assert_eq!(names.len(), 1 + 2 * 3 + 2 * 2);
    }
}
