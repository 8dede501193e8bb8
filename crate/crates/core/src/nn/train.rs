//! Mini-batch SGD and prediction.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::bce_loss;
use super::model::{Batch, ClassifierModel, Mode};
use super::retrieval::{gather, select_neighbors, ReferenceSet};
use super::{NnError, Result};
use crate::data::Label;
use crate::linalg::Matrix;
use crate::preprocess::ScalerParams;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig("learning_rate must be finite and nonnegative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NnError::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean train-mode minibatch loss over the epoch.
    pub loss: f64,
    /// Eval-mode accuracy on the full training set after the epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    /// CSV with header `epoch,loss,train_accuracy`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,loss,train_accuracy")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.loss, e.train_accuracy)?;
        }
        Ok(())
    }
}

/// What the model is trained on.
#[derive(Debug, Clone, Copy)]
pub enum TrainingSet<'a> {
    /// Standardized feature rows with 0/1 labels.
    Features { x: &'a Matrix, labels: &'a [f64] },
    /// Raw embeddings; neighbours are reselected from `reference` through the
    /// current attention gate at the start of every epoch.
    Retrieval {
        reference: &'a ReferenceSet,
        queries: &'a Matrix,
        query_ids: &'a [String],
        labels: &'a [f64],
        scaler: &'a ScalerParams,
    },
}

impl TrainingSet<'_> {
    fn len(&self) -> usize {
        match self {
            TrainingSet::Features { labels, .. } | TrainingSet::Retrieval { labels, .. } => labels.len(),
        }
    }

    fn labels(&self) -> &[f64] {
        match self {
            TrainingSet::Features { labels, .. } | TrainingSet::Retrieval { labels, .. } => labels,
        }
    }

    fn rows(&self) -> usize {
        match self {
            TrainingSet::Features { x, .. } => x.rows(),
            TrainingSet::Retrieval { queries, .. } => queries.rows(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub score: f64,
}

/// `ŷ ≥ 0.5` is real; the boundary goes to the positive class.
pub fn decide(score: f64) -> Label {
    if score >= 0.5 {
        Label::Real
    } else {
        Label::Fake
    }
}

/// Eval-mode predictions.
pub fn predict(model: &ClassifierModel, batch: Batch<'_>) -> Result<Vec<Prediction>> {
    Ok(model
        .scores(batch)?
        .into_iter()
        .map(|score| Prediction {
            label: decide(score),
            score,
        })
        .collect())
}

const EVAL_CHUNK: usize = 512;

/// Eval-mode scores for a whole training set, given fixed neighbours.
fn score_all(model: &ClassifierModel, data: &TrainingSet<'_>, neighbors: Option<&[Vec<usize>]>) -> Result<Vec<f64>> {
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for rows in all.chunks(EVAL_CHUNK) {
        let scores = match (data, neighbors) {
            (TrainingSet::Features { x, .. }, _) => model.scores(Batch::Features(&x.select_rows(rows)))?,
            (
                TrainingSet::Retrieval {
                    reference,
                    queries,
                    scaler,
                    ..
                },
                Some(nb),
            ) => {
                let batch = gather(reference, queries, rows, nb);
                model.scores(Batch::Retrieval { batch: &batch, scaler })?
            }
            (TrainingSet::Retrieval { .. }, None) => unreachable!("retrieval scoring always has neighbours"),
        };
        out.extend(scores);
    }
    Ok(out)
}

/// Eval-mode scores for raw query embeddings against a reference set, with
/// neighbours selected through the model's attention gate.
pub fn score_embeddings(
    model: &ClassifierModel,
    reference: &ReferenceSet,
    queries: &Matrix,
    query_ids: &[String],
    scaler: &ScalerParams,
) -> Result<Vec<f64>> {
    let labels = vec![0.0; queries.rows()];
    let data = TrainingSet::Retrieval {
        reference,
        queries,
        query_ids,
        labels: &labels,
        scaler,
    };
    let nb = select_neighbors(model.attention.as_ref(), reference, queries, query_ids, model.k)?;
    score_all(model, &data, Some(&nb))
}

/// Splits a permutation into minibatches. With batch norm, a trailing batch
/// of one sample is merged into the previous batch.
fn minibatches(perm: &[usize], batch_size: usize, needs_pairs: bool) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = perm.chunks(batch_size).collect();
    if needs_pairs && out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().expect("at least one batch") = &perm[start..];
    }
    out
}

/// Trains `model` with plain minibatch SGD. Deterministic given
/// `config.seed`: shuffling and dropout draw from separate seeded streams.
pub fn train(mut model: ClassifierModel, data: TrainingSet<'_>, config: &TrainConfig) -> Result<(ClassifierModel, History)> {
    config.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(NnError::EmptyTrainingSet);
    }
    if data.rows() != n {
        return Err(NnError::LengthMismatch {
            expected: data.rows(),
            actual: n,
        });
    }
    let has_bn = model.batchnorm.is_some();
    if has_bn && n < 2 {
        return Err(NnError::InvalidConfig("batch norm needs at least two training samples".into()));
    }
    let labels = data.labels();
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let mut dropout_rng = rng::stream(config.seed, Stream::Dropout);

    let select = |m: &ClassifierModel| -> Result<Option<Vec<Vec<usize>>>> {
        match data {
            TrainingSet::Retrieval {
                reference,
                queries,
                query_ids,
                ..
            } => Ok(Some(select_neighbors(m.attention.as_ref(), reference, queries, query_ids, m.k)?)),
            TrainingSet::Features { .. } => Ok(None),
        }
    };
    let mut neighbors = select(&model)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut history = History::default();

    for epoch in 1..=config.epochs {
        perm.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for rows in minibatches(&perm, config.batch_size, has_bn) {
            let y: Vec<f64> = rows.iter().map(|&r| labels[r]).collect();
            let (cache, grads) = match &data {
                TrainingSet::Features { x, .. } => {
                    let xb = x.select_rows(rows);
                    let cache = model.forward(Batch::Features(&xb), Mode::Train, Some(&mut dropout_rng))?;
                    let grads = model.backward(&cache, &y, None)?;
                    (cache, grads)
                }
                TrainingSet::Retrieval {
                    reference,
                    queries,
                    scaler,
                    ..
                } => {
                    let nb = neighbors.as_deref().expect("selected above");
                    let batch = gather(reference, queries, rows, nb);
                    let cache = model.forward(Batch::Retrieval { batch: &batch, scaler }, Mode::Train, Some(&mut dropout_rng))?;
                    let grads = model.backward(&cache, &y, Some(scaler))?;
                    (cache, grads)
                }
            };
            loss_sum += bce_loss(cache.output(), &y)? * rows.len() as f64;
            model.apply_sgd(&grads, config.learning_rate);
            model.update_running_stats(&cache);
        }
        if neighbors.is_some() {
            neighbors = select(&model)?;
        }
        let scores = score_all(&model, &data, neighbors.as_deref())?;
        let correct = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &y)| decide(s).as_f64() == y)
            .count();
        history.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
        });
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::ModelSpec;

    #[test]
    fn decision_boundary_goes_positive() {
        assert_eq!(decide(0.5), Label::Real);
        assert_eq!(decide(0.4999), Label::Fake);
    }

    #[test]
    fn minibatch_merging() {
        let perm: Vec<usize> = (0..9).collect();
        let b = minibatches(&perm, 4, true);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 5]);
        let b = minibatches(&perm, 4, false);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 4, 1]);
        let one = [0usize];
        assert_eq!(minibatches(&one, 4, true).len(), 1);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let model = ClassifierModel::new(&ModelSpec::model_i(1, false), &mut rng::stream(0, Stream::Init)).unwrap();
        let x = Matrix::zeros(0, 1);
        let err = train(model, TrainingSet::Features { x: &x, labels: &[] }, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, NnError::EmptyTrainingSet));
    }

    #[test]
    fn history_csv() {
        let h = History {
            epochs: vec![EpochStats {
                epoch: 1,
                loss: 0.5,
                train_accuracy: 0.75,
            }],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,loss,train_accuracy\n1,0.5,0.75\n");
    }
}
