//! Softmax-regression scoring head: the algorithmic rater.
//!
//! A [`SoftmaxModel`] maps any fixed-dimension representation to a rubric
//! label with class probabilities. Training is full-batch gradient descent
//! with loss-increase backtracking, which costs more steps than stochastic
//! methods but makes every run bit-reproducible from (data, config, seed).
//! Predictions convert to ordinary [`ScoreRecord`]s via [`as_rater`], so the
//! agreement module compares the machine against humans with the same
//! statistics it uses between humans.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{AgreementError, ConfusionMatrix};
use crate::corpus::{ItemId, Label, Partition, ScoreRecord, SplitAssignment, LABEL_SCALE};
use crate::representations::VectorSet;

/// Number of output classes, fixed to the rubric scale.
pub const K: usize = LABEL_SCALE;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("no vector for item {0}")]
    MissingVector(String),
    #[error("no gold label for item {0}")]
    MissingLabel(String),
    #[error("vector dimension {got} does not match model dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("train partition is empty")]
    EmptyTrainSet,
    #[error("evaluation item set is empty")]
    EmptyPartition,
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    BadModelFile { path: String, message: String },
    #[error(transparent)]
    Agreement(#[from] AgreementError),
}

/// Gradient-descent hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub max_epochs: usize,
    /// Stop when the absolute loss delta between epochs falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            l2_penalty: 1e-4,
            max_epochs: 500,
            tolerance: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.learning_rate > 0.0) {
            return Err(ClassifierError::BadConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.l2_penalty < 0.0 {
            return Err(ClassifierError::BadConfig(format!(
                "l2_penalty must be >= 0, got {}",
                self.l2_penalty
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(ClassifierError::BadConfig(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_epochs == 0 {
            return Err(ClassifierError::BadConfig(
                "max_epochs must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// K x (D+1) weight matrix (bias in the last column) plus training metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub dim: usize,
    pub k: usize,
    /// `weights[class][0..dim]` are feature weights, `weights[class][dim]`
    /// is the bias.
    pub weights: Vec<Vec<f64>>,
    pub epochs_run: usize,
    pub final_loss: f64,
}

/// One item's predicted label and class probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub probs: [f64; K],
}

/// Model plus per-epoch traces from one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SoftmaxModel,
    /// Training loss after each accepted epoch step.
    pub loss_trace: Vec<f64>,
    /// Dev-partition accuracy after each epoch; empty when dev is empty.
    pub dev_accuracy: Vec<f64>,
}

fn scores(weights: &[Vec<f64>], x: &[f64]) -> [f64; K] {
    let dim = x.len();
    let mut z = [0.0; K];
    for (k, row) in weights.iter().enumerate() {
        let mut acc = 0.0;
        for j in 0..dim {
            acc += row[j] * x[j];
        }
        z[k] = acc + row[dim];
    }
    z
}

fn softmax(z: &[f64; K]) -> [f64; K] {
    // Max subtraction keeps exp in range and makes probabilities exactly
    // invariant to a constant added to every class score.
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; K];
    let mut total = 0.0;
    for k in 0..K {
        p[k] = (z[k] - max).exp();
        total += p[k];
    }
    for v in &mut p {
        *v /= total;
    }
    p
}

fn argmax_lowest(p: &[f64; K]) -> usize {
    let mut best = 0;
    for k in 1..K {
        if p[k] > p[best] {
            best = k;
        }
    }
    best
}

/// Mean cross-entropy + `l2 * |weights-sans-bias|^2` and its gradient, both
/// accumulated in canonical item order for bit-reproducibility.
#[doc(hidden)]
pub fn loss_and_gradient(
    weights: &[Vec<f64>],
    data: &[(Vec<f64>, usize)],
    l2: f64,
) -> (f64, Vec<Vec<f64>>) {
    let dim = weights[0].len() - 1;
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; dim + 1]; K];
    for (x, gold) in data {
        let p = softmax(&scores(weights, x));
        loss -= p[*gold].max(1e-300).ln();
        for k in 0..K {
            let delta = p[k] - f64::from(u8::from(k == *gold));
            for j in 0..dim {
                grad[k][j] += delta * x[j];
            }
            grad[k][dim] += delta;
        }
    }
    loss /= n;
    for row in &mut grad {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    for k in 0..K {
        for j in 0..dim {
            loss += l2 * weights[k][j] * weights[k][j];
            grad[k][j] += 2.0 * l2 * weights[k][j];
        }
    }
    (loss, grad)
}

fn gather(
    vectors: &VectorSet,
    gold: &BTreeMap<ItemId, Label>,
    items: &[&ItemId],
) -> Result<Vec<(Vec<f64>, usize)>, ClassifierError> {
    let mut data = Vec::with_capacity(items.len());
    for item in items {
        let x = vectors
            .get(item)
            .ok_or_else(|| ClassifierError::MissingVector(item.to_string()))?;
        let label = gold
            .get(item)
            .ok_or_else(|| ClassifierError::MissingLabel(item.to_string()))?;
        data.push((x.to_vec(), label.index()));
    }
    Ok(data)
}

/// Train on the split's train partition, tracking dev accuracy per epoch.
///
/// Each epoch takes one full-batch step; if the step increases the loss the
/// step size is halved and retried (restored at the next epoch), so the loss
/// trace is non-increasing. Stops at `max_epochs` or when the loss delta
/// drops below `tolerance`.
pub fn train_softmax(
    vectors: &VectorSet,
    gold: &BTreeMap<ItemId, Label>,
    split: &SplitAssignment,
    config: &TrainConfig,
) -> Result<TrainOutcome, ClassifierError> {
    config.validate()?;
    let train_items = split.items_in(Partition::Train);
    if train_items.is_empty() {
        return Err(ClassifierError::EmptyTrainSet);
    }
    let train = gather(vectors, gold, &train_items)?;
    let dev = gather(vectors, gold, &split.items_in(Partition::Dev))?;
    let dim = vectors.dim();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights: Vec<Vec<f64>> = (0..K)
        .map(|_| (0..=dim).map(|_| rng.random_range(-0.01..0.01)).collect())
        .collect();

    let (mut loss, mut grad) = loss_and_gradient(&weights, &train, config.l2_penalty);
    let mut loss_trace = Vec::new();
    let mut dev_accuracy = Vec::new();
    let mut epochs_run = 0;

    for _ in 0..config.max_epochs {
        let mut step = config.learning_rate;
        let (new_weights, new_loss) = loop {
            let candidate: Vec<Vec<f64>> = weights
                .iter()
                .zip(grad.iter())
                .map(|(wrow, grow)| {
                    wrow.iter()
                        .zip(grow.iter())
                        .map(|(w, g)| w - step * g)
                        .collect()
                })
                .collect();
            let (candidate_loss, _) = loss_and_gradient(&candidate, &train, config.l2_penalty);
            if candidate_loss <= loss || step < 1e-15 {
                break (candidate, candidate_loss);
            }
            step /= 2.0;
        };
        let accepted_loss = new_loss.min(loss);
        if new_loss <= loss {
            weights = new_weights;
        }
        epochs_run += 1;
        loss_trace.push(accepted_loss);
        if !dev.is_empty() {
            let correct = dev
                .iter()
                .filter(|(x, gold)| argmax_lowest(&softmax(&scores(&weights, x))) == *gold)
                .count();
            dev_accuracy.push(correct as f64 / dev.len() as f64);
        }
        let delta = (loss - accepted_loss).abs();
        let (next_loss, next_grad) = loss_and_gradient(&weights, &train, config.l2_penalty);
        loss = next_loss;
        grad = next_grad;
        if delta < config.tolerance {
            break;
        }
    }

    Ok(TrainOutcome {
        model: SoftmaxModel {
            dim,
            k: K,
            weights,
            epochs_run,
            final_loss: loss,
        },
        loss_trace,
        dev_accuracy,
    })
}

impl SoftmaxModel {
    /// Probabilities and argmax label for one vector. Ties resolve to the
    /// lowest class index.
    pub fn predict_one(&self, x: &[f64]) -> Result<Prediction, ClassifierError> {
        if x.len() != self.dim {
            return Err(ClassifierError::DimMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let probs = softmax(&scores(&self.weights, x));
        let label = Label::new(argmax_lowest(&probs) as i64).expect("class index in scale");
        Ok(Prediction { label, probs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| ClassifierError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::to_writer_pretty(file, self).map_err(|e| ClassifierError::BadModelFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| ClassifierError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let model: SoftmaxModel =
            serde_json::from_reader(file).map_err(|e| ClassifierError::BadModelFile {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        if model.k != K
            || model.weights.len() != K
            || model.weights.iter().any(|row| row.len() != model.dim + 1)
            || model.weights.iter().flatten().any(|w| !w.is_finite())
        {
            return Err(ClassifierError::BadModelFile {
                path: path.display().to_string(),
                message: "inconsistent shape or non-finite weights".to_string(),
            });
        }
        Ok(model)
    }
}

/// Predict every vector in the set, in canonical item order.
pub fn predict(
    model: &SoftmaxModel,
    vectors: &VectorSet,
) -> Result<BTreeMap<ItemId, Prediction>, ClassifierError> {
    let mut out = BTreeMap::new();
    for (item, x) in vectors.iter() {
        out.insert(item.clone(), model.predict_one(x)?);
    }
    Ok(out)
}

/// Exact-match accuracy and gold-by-predicted confusion matrix over `items`.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub n_items: usize,
    pub accuracy: f64,
    /// Rows = gold label, columns = predicted label.
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(
    model: &SoftmaxModel,
    vectors: &VectorSet,
    gold: &BTreeMap<ItemId, Label>,
    items: &[&ItemId],
) -> Result<Evaluation, ClassifierError> {
    if items.is_empty() {
        return Err(ClassifierError::EmptyPartition);
    }
    let mut gold_seq = Vec::with_capacity(items.len());
    let mut pred_seq = Vec::with_capacity(items.len());
    for item in items {
        let x = vectors
            .get(item)
            .ok_or_else(|| ClassifierError::MissingVector(item.to_string()))?;
        let label = gold
            .get(item)
            .ok_or_else(|| ClassifierError::MissingLabel(item.to_string()))?;
        gold_seq.push(label.index());
        pred_seq.push(model.predict_one(x)?.label.index());
    }
    let confusion = ConfusionMatrix::from_labels(&gold_seq, &pred_seq, K)?;
    let correct = gold_seq
        .iter()
        .zip(pred_seq.iter())
        .filter(|(g, p)| g == p)
        .count();
    Ok(Evaluation {
        n_items: items.len(),
        accuracy: correct as f64 / items.len() as f64,
        confusion,
    })
}

/// Convert predictions into score records under a machine rater identity, so
/// downstream agreement statistics treat the model as a peer rater.
pub fn as_rater(
    predictions: &BTreeMap<ItemId, Prediction>,
    rater_id: &str,
    epoch: &str,
) -> Vec<ScoreRecord> {
    predictions
        .iter()
        .map(|(item, prediction)| ScoreRecord {
            rater_id: rater_id.to_string(),
            student_id: item.student_id.clone(),
            task_id: item.task_id.clone(),
            label: prediction.label,
            epoch: epoch.to_string(),
        })
        .collect()
}

/// Write predictions as CSV `student_id,task_id,label,p0,p1,p2` with
/// canonical float formatting.
pub fn write_predictions_csv(
    predictions: &BTreeMap<ItemId, Prediction>,
    mut w: impl Write,
) -> std::io::Result<()> {
    writeln!(w, "student_id,task_id,label,p0,p1,p2")?;
    for (item, p) in predictions {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            item.student_id, item.task_id, p.label, p.probs[0], p.probs[1], p.probs[2]
        )?;
    }
    Ok(())
}
