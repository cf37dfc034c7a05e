//! Multinomial logistic probe on frozen embeddings, trained by mini-batch
//! gradient descent with validation-loss early stopping.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::math;
use crate::zeroshot::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            max_epochs: 200,
            patience: 5,
            batch_size: 16,
            optimizer: Optimizer::Sgd,
            weight_decay: 0.0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidInput("learning_rate must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidInput("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidInput("batch_size and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Weights are row-major `classes x dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub classes: Vec<ClassLabel>,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(classes: Vec<ClassLabel>, dim: usize) -> Self {
        let k = classes.len();
        Self { classes, dim, weights: vec![0.0; k * dim], bias: vec![0.0; k] }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(c, b)| b + self.weights[c * self.dim..(c + 1) * self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let logits = self.logits(x);
        let mut out = vec![0.0; logits.len()];
        math::softmax_into(&logits, &mut out);
        out
    }

    pub fn predict(&self, embedding: &Embedding) -> ClassLabel {
        let x = to_f64(embedding);
        self.classes[argmax(&self.logits(&x)).unwrap_or(0)]
    }
}

/// Gradient with the same layout as [`LinearModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Example as dense features plus class index into `LinearModel::classes`.
pub type Example = (Vec<f64>, usize);

/// Mean cross-entropy over `batch`.
pub fn mean_loss(model: &LinearModel, batch: &[Example]) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|(x, y)| {
            let z = model.logits(x);
            math::log_sum_exp(&z) - z[*y]
        })
        .sum();
    total / batch.len() as f64
}

/// Mean cross-entropy and its analytic gradient: `(p - onehot(y)) x^T`.
pub fn loss_and_gradient(model: &LinearModel, batch: &[Example]) -> (f64, Gradient) {
    let k = model.classes.len();
    let d = model.dim;
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    let mut loss = 0.0;
    for (x, y) in batch {
        let z = model.logits(x);
        loss += math::log_sum_exp(&z) - z[*y];
        let mut p = vec![0.0; k];
        math::softmax_into(&z, &mut p);
        p[*y] -= 1.0;
        for c in 0..k {
            gb[c] += p[c];
            let row = &mut gw[c * d..(c + 1) * d];
            for (g, v) in row.iter_mut().zip(x) {
                *g += p[c] * v;
            }
        }
    }
    let n = batch.len() as f64;
    gw.iter_mut().for_each(|g| *g /= n);
    gb.iter_mut().for_each(|g| *g /= n);
    (loss / n, Gradient { weights: gw, bias: gb })
}

/// Patience counter over validation losses. An epoch improves only when its
/// loss is strictly below the best seen so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    /// Records the loss of 1-based `epoch`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> StepOutcome {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            StepOutcome { improved: true, stop: false }
        } else {
            self.stale += 1;
            StepOutcome { improved: false, stop: self.stale >= self.patience }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub model: LinearModel,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub val_loss_history: Vec<f64>,
}

impl ProbeModel {
    pub fn predict(&self, embedding: &Embedding) -> ClassLabel {
        self.model.predict(embedding)
    }
}

fn to_f64(e: &Embedding) -> Vec<f64> {
    e.as_slice().iter().map(|&v| f64::from(v)).collect()
}

fn encode(data: &[(Embedding, ClassLabel)], classes: &[ClassLabel], dim: usize) -> Result<Vec<Example>> {
    data.iter()
        .map(|(e, l)| {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: e.dim() });
            }
            let idx = classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::InvalidInput(alloc::format!("label `{l}` does not occur in the training data")))?;
            Ok((to_f64(e), idx))
        })
        .collect()
}

/// Trains on `train`, early-stops on `val` loss and returns the snapshot
/// with the lowest validation loss. Initialization and batch order come from
/// a ChaCha stream seeded with `seed`.
pub fn train_linear_probe(
    train: &[(Embedding, ClassLabel)],
    val: &[(Embedding, ClassLabel)],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeModel> {
    cfg.validate()?;
    let first = train.first().ok_or(Error::EmptyInput("probe training set"))?;
    if val.is_empty() {
        return Err(Error::EmptyInput("probe validation set"));
    }
    let dim = first.0.dim();
    let mut classes: Vec<ClassLabel> = train.iter().map(|(_, l)| *l).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses(classes.len()));
    }
    let train_x = encode(train, &classes, dim)?;
    let val_x = encode(val, &classes, dim)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LinearModel::zeros(classes, dim);
    for w in model.weights.iter_mut() {
        *w = (rng.random::<f64>() - 0.5) * 0.02;
    }
    let mut velocity = Gradient { weights: vec![0.0; model.weights.len()], bias: vec![0.0; model.bias.len()] };

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut epochs_run = 0;
    let mut batch: Vec<Example> = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_x[i].clone()));
            let (loss, grad) = loss_and_gradient(&model, &batch);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            apply(&mut model, &grad, &mut velocity, cfg);
        }
        let val_loss = mean_loss(&model, &val_x);
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        history.push(val_loss);
        epochs_run = epoch;
        let step = stopper.observe(epoch, val_loss);
        if step.improved {
            best = model.clone();
        }
        if step.stop {
            break;
        }
    }
    Ok(ProbeModel {
        model: best,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
        epochs_run,
        val_loss_history: history,
    })
}

fn apply(model: &mut LinearModel, grad: &Gradient, velocity: &mut Gradient, cfg: &ProbeConfig) {
    let lr = cfg.learning_rate;
    let step = |p: &mut f64, g: f64, v: &mut f64, decay: f64| {
        let g = g + decay * *p;
        match cfg.optimizer {
            Optimizer::Sgd => *p -= lr * g,
            Optimizer::Momentum { beta } => {
                *v = beta * *v + g;
                *p -= lr * *v;
            }
        }
    };
    for ((p, &g), v) in model.weights.iter_mut().zip(&grad.weights).zip(velocity.weights.iter_mut()) {
        step(p, g, v, cfg.weight_decay);
    }
    for ((p, &g), v) in model.bias.iter_mut().zip(&grad.bias).zip(velocity.bias.iter_mut()) {
        step(p, g, v, 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_patience() {
        let losses = [1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99];
        let mut s = EarlyStopping::new(5);
        let mut stopped_at = None;
        for (i, &l) in losses.iter().enumerate() {
            if s.observe(i + 1, l).stop {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(7));
        assert_eq!(s.best_epoch(), 2);
        assert_eq!(s.best_loss(), 0.9);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut s = EarlyStopping::new(1);
        assert!(s.observe(1, 0.5).improved);
        assert!(s.observe(2, 0.5).stop);
    }

    #[test]
    fn config_validation() {
        assert!(ProbeConfig { patience: 0, ..Default::default() }.validate().is_err());
        assert!(ProbeConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(ProbeConfig::default().validate().is_ok());
    }

    #[test]
    fn single_class_is_rejected() {
        let e = Embedding::normalized(vec![1.0, 0.0]).unwrap();
        let train = vec![(e.clone(), ClassLabel::Sitting)];
        let r = train_linear_probe(&train, &train, &ProbeConfig::default(), 0);
        assert_eq!(r, Err(Error::TooFewClasses(1)));
    }
}
