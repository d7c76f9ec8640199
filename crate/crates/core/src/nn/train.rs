//! Mini-batch training with a chronological validation tail.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{NamedTensors, NetworkModel};
use super::loss::mse_loss;
use super::optim::{adam_step, StepOutcome};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::preprocess::SupervisedSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    pub lr_reduce_patience: usize,
    pub lr_reduce_factor: f64,
    pub min_lr: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            early_stop_patience: 10,
            lr_reduce_patience: 5,
            lr_reduce_factor: 0.5,
            min_lr: 1e-5,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !(self.min_lr >= 0.0) {
            return bad("learning_rate must be positive and min_lr non-negative");
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor < 1.0) {
            return bad("lr_reduce_factor must lie in (0, 1)");
        }
        if self.early_stop_patience == 0 || self.lr_reduce_patience == 0 {
            return bad("patience values must be >= 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Samples stacked along the leading axis of every tensor.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub inputs: NamedTensors,
    pub targets: Tensor,
}

impl TrainData {
    pub fn new(inputs: NamedTensors, targets: Tensor) -> Result<Self> {
        let n = targets.batch();
        if inputs.values().any(|t| t.batch() != n || t.shape().len() < 2) {
            return Err(Error::shape("inputs and targets disagree on sample count"));
        }
        Ok(TrainData { inputs, targets })
    }

    /// Single-input data from windowed series; targets become `[n, 1]`.
    pub fn from_supervised(set: &SupervisedSet, input_name: &str) -> Result<Self> {
        let mut inputs = NamedTensors::new();
        inputs.insert(
            input_name.to_string(),
            Tensor::new(vec![set.n_samples, set.lookback, set.n_channels], set.inputs.clone())?,
        );
        TrainData::new(inputs, Tensor::new(vec![set.n_samples, 1], set.targets.clone())?)
    }

    pub fn len(&self) -> usize {
        self.targets.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> (NamedTensors, Tensor) {
        let inputs = self.inputs.iter().map(|(k, t)| (k.clone(), t.gather_rows(idx))).collect();
        (inputs, self.targets.gather_rows(idx))
    }

    /// `(training, validation)` index ranges; validation is the last
    /// `fraction` of samples.
    pub fn split(&self, fraction: f64) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let n = self.len();
        let n_val = ((n as f64 * fraction).round() as usize).max(1);
        if n_val >= n {
            return Err(Error::Training(format!(
                "{n} samples leave no training split after a {fraction} validation carve-out"
            )));
        }
        Ok((0..n - n_val, n - n_val..n))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the restored weights.
    pub best_epoch: usize,
}

impl History {
    pub fn best_val_mse(&self) -> f64 {
        self.epochs.get(self.best_epoch).map(|r| r.val_mse).unwrap_or(f64::NAN)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse,lr\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_mse, r.val_mse, r.lr);
        }
        s
    }
}

/// Inference-mode MSE over `idx`, evaluated in chunks of `chunk` samples.
pub fn evaluate(model: &NetworkModel, data: &TrainData, idx: &[usize], chunk: usize) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Training("evaluation over zero samples".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for part in idx.chunks(chunk.max(1)) {
        let (inputs, targets) = data.batch(part);
        let pred = model.predict(&inputs)?;
        let (loss, _) = mse_loss(&pred, &targets)?;
        total += loss * targets.len() as f64;
        count += targets.len();
    }
    Ok(total / count as f64)
}

/// Trains `model` in place and restores the weights of the epoch with the
/// lowest validation MSE.
pub fn train(model: &mut NetworkModel, data: &TrainData, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    let (train_range, val_range) = data.split(cfg.validation_fraction)?;
    let val_idx: Vec<usize> = val_range.collect();
    let mut order: Vec<usize> = train_range.collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    model.round_to_f32();

    let mut lr = cfg.learning_rate;
    let mut history = History::default();
    let mut best = f64::INFINITY;
    let mut best_weights = model.weights().clone();
    let mut since_best = 0usize;
    let mut since_lr = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (inputs, targets) = data.batch(idx);
            let tape = model.forward(&inputs, true)?;
            let pred = tape.value(&model.spec().output).expect("output on tape");
            let (loss, grad) = mse_loss(pred, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite training loss at epoch {epoch}, batch {b} (lr {lr})")));
            }
            sum += loss * idx.len() as f64;
            let grads = model.backward(&tape, &grad)?;
            model.update_batch_norm_stats(&tape);
            let mut weights = std::mem::take(model.weights_mut());
            let mut adam = std::mem::take(&mut model.adam);
            let outcome = adam_step(&mut weights, &grads.weights, &mut adam, lr);
            *model.weights_mut() = weights;
            model.adam = adam;
            if outcome? == StepOutcome::SkippedNonFinite {
                return Err(Error::Training(format!("non-finite gradient at epoch {epoch}, batch {b}")));
            }
            model.round_to_f32();
        }
        let train_mse = sum / order.len() as f64;
        let val_mse = evaluate(model, data, &val_idx, 256)?;
        if !val_mse.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        history.epochs.push(EpochRecord { epoch, train_mse, val_mse, lr });
        if val_mse < best {
            best = val_mse;
            best_weights = model.weights().clone();
            history.best_epoch = epoch;
            since_best = 0;
            since_lr = 0;
        } else {
            since_best += 1;
            since_lr += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
            if since_lr >= cfg.lr_reduce_patience {
                lr = (lr * cfg.lr_reduce_factor).max(cfg.min_lr);
                since_lr = 0;
            }
        }
    }
    model.set_weights(best_weights)?;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::{GraphSpec, InputSpec, NodeSpec};
    use crate::nn::layers::{Activation, LayerSpec};

    fn mlp() -> NetworkModel {
        let spec = GraphSpec {
            inputs: vec![InputSpec { name: "x".into(), shape: vec![2] }],
            nodes: vec![
                NodeSpec {
                    name: "h".into(),
                    layer: LayerSpec::Dense { units: 32, activation: Activation::Tanh },
                    inputs: vec!["x".into()],
                },
                NodeSpec {
                    name: "out".into(),
                    layer: LayerSpec::Dense { units: 1, activation: Activation::Linear },
                    inputs: vec!["h".into()],
                },
            ],
            output: "out".into(),
        };
        NetworkModel::new(spec, 3).unwrap()
    }

    fn toy(n: usize) -> TrainData {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let a = i as f64 / n as f64;
            let b = ((i * 7) % n) as f64 / n as f64;
            x.extend([a, b]);
            y.push(0.5 * a - 0.3 * b + 0.4 * a * b);
        }
        let mut inputs = NamedTensors::new();
        inputs.insert("x".into(), Tensor::new(vec![n, 2], x).unwrap());
        TrainData::new(inputs, Tensor::new(vec![n, 1], y).unwrap()).unwrap()
    }

    #[test]
    fn memorizes_small_set() {
        let data = toy(32);
        let mut model = mlp();
        let cfg = TrainConfig {
            epochs: 500,
            batch_size: 4,
            learning_rate: 0.01,
            early_stop_patience: 500,
            lr_reduce_patience: 500,
            validation_fraction: 0.125,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &cfg).unwrap();
        let idx: Vec<usize> = (0..28).collect();
        let mse = evaluate(&model, &data, &idx, 64).unwrap();
        assert!(mse < 1e-4, "training mse {mse}");
    }

    #[test]
    fn best_weights_restored_and_reproducible() {
        let data = toy(64);
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 16,
            learning_rate: 0.05,
            early_stop_patience: 3,
            lr_reduce_patience: 2,
            ..TrainConfig::default()
        };
        let mut a = mlp();
        let h = train(&mut a, &data, &cfg).unwrap();
        let val: Vec<usize> = data.split(cfg.validation_fraction).unwrap().1.collect();
        let restored = evaluate(&a, &data, &val, 64).unwrap();
        let min = h.epochs.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(restored, min);
        assert!(h.epochs.len() - 1 <= h.best_epoch + cfg.early_stop_patience);

        let mut b = mlp();
        let h2 = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(h, h2);
        assert_eq!(a.weights(), b.weights());
        assert!(h.to_csv().starts_with("epoch,train_mse,val_mse,lr\n"));
    }

    #[test]
    fn plateau_stops_early() {
        // Zero weights on a zero target: every gradient vanishes, the loss never moves.
        let mut data = toy(40);
        data.targets = Tensor::zeros(&[40, 1]);
        let mut model = mlp();
        for t in model.weights_mut().values_mut() {
            t.data_mut().fill(0.0);
        }
        let cfg = TrainConfig { epochs: 100, early_stop_patience: 3, ..TrainConfig::default() };
        let h = train(&mut model, &data, &cfg).unwrap();
        assert_eq!(h.best_epoch, 0);
        assert_eq!(h.epochs.len(), 4);
    }

    #[test]
    fn empty_training_split_rejected() {
        let data = toy(1);
        assert!(train(&mut mlp(), &data, &TrainConfig::default()).is_err());
    }
}
