//! Optimizers and the two-stage training protocol.
//!
//! Stage one trains each sub-network (uni-modal cLSTMs, EF, MMA) on its own
//! with [`train_subnetwork`]. Stage two ([`train_fusion_head`]) freezes every
//! sub-network tensor of an LF or MMAN model and updates only the `fusion.`
//! layers. One optimizer step is taken per conversation.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{num_utterances, Conversation};
use crate::error::{Error, Result};
use crate::models::{is_fusion_param, Model};
use crate::nn::{Ctx, Dropout};
use crate::params::ParameterStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 10,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::config("clip_norm must be non-negative (0 disables clipping)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::config("adam moments must lie in [0, 1) and epsilon must be positive"));
        }
        Ok(())
    }
}

/// Plain gradient descent or adaptive-moment estimation over the unfrozen
/// tensors of a store.
pub struct Optimizer {
    cfg: TrainConfig,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, store: &ParameterStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self {
            cfg: cfg.clone(),
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParameterStore) {
        self.step = self.step.saturating_add(1);
        let lr = self.cfg.learning_rate;
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.epsilon);
        let bc1 = 1.0 - b1.powi(self.step);
        let bc2 = 1.0 - b2.powi(self.step);
        for (k, (_, p)) in store.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let grads = p.grad.data().to_vec();
            let values = p.value.data_mut();
            match self.cfg.optimizer {
                OptimizerKind::Sgd => {
                    for (w, g) in values.iter_mut().zip(&grads) {
                        *w -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for i in 0..values.len() {
                        let g = grads[i];
                        m[i] = b1 * m[i] + (1.0 - b1) * g;
                        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Scales unfrozen gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm(store: &mut ParameterStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for (_, p) in store.iter_mut() {
            if !p.frozen {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub epochs: Vec<EpochRecord>,
    /// Digest of every parameter after training.
    pub snapshot_id: String,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    pub fn final_train_acc(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.train_acc)
    }

    /// One JSON object per epoch: `{"epoch":..,"mean_loss":..,"train_acc":..}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io("<train log>", e))?;
        }
        Ok(())
    }
}

fn mean_ce(ctx: &mut Ctx<'_>, probs: Vec<Var>, conv: &Conversation) -> Result<(Var, Vec<Var>)> {
    let terms = probs
        .iter()
        .zip(conv.labels())
        .map(|(&p, y)| ctx.tape.cross_entropy(p, y))
        .collect::<Result<Vec<_>>>()?;
    Ok((ctx.tape.mean(&terms)?, probs))
}

fn run<F>(model: &mut Model, dataset: &[Conversation], cfg: &TrainConfig, loss_fn: F) -> Result<TrainReport>
where
    F: Fn(&Model, &mut Ctx<'_>, usize) -> Result<(Var, Vec<Var>)>,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let started = Instant::now();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(3);
    let mut dropout = (model.config.dropout > 0.0).then(|| Dropout::new(model.config.dropout, cfg.seed ^ 0x9e37_79b9));
    let mut optimizer = Optimizer::new(cfg, &model.store);
    let total = num_utterances(dataset) as f64;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for &idx in &order {
            let conv = &dataset[idx];
            model.store.zero_grad();
            let mut tape = Tape::new();
            let (loss, probs) = {
                let mut ctx = Ctx::training(&mut tape, &model.store, dropout.as_mut());
                loss_fn(model, &mut ctx, idx)?
            };
            let value = tape.value(loss).data()[0];
            loss_sum += value * conv.len() as f64;
            correct += probs
                .iter()
                .zip(conv.labels())
                .filter(|(p, y)| tape.value(**p).argmax() == *y)
                .count();
            let grads = tape.backward(loss)?;
            grads.accumulate_into(&mut model.store);
            if cfg.clip_norm > 0.0 {
                clip_grad_norm(&mut model.store, cfg.clip_norm);
            }
            optimizer.step(&mut model.store);
        }
        let mean_loss = loss_sum / total;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean_loss });
        }
        records.push(EpochRecord {
            epoch,
            mean_loss,
            train_acc: correct as f64 / total,
        });
    }
    Ok(TrainReport {
        model: model.name().to_string(),
        epochs: records,
        snapshot_id: model.store.digest(),
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains a single-stage model end to end on mean per-utterance
/// cross-entropy.
pub fn train_subnetwork(model: &mut Model, dataset: &[Conversation], cfg: &TrainConfig) -> Result<TrainReport> {
    if model.arch.is_two_stage() {
        return Err(Error::config(format!(
            "{} is trained in two stages; train its sub-networks and then call train_fusion_head",
            model.name()
        )));
    }
    for (_, p) in model.store.iter_mut() {
        p.frozen = false;
    }
    run(model, dataset, cfg, |m, ctx, i| m.loss_with_outputs(ctx, &dataset[i]))
}

/// Trains only the fusion layers of an LF or MMAN model; every sub-network
/// tensor must come out bitwise identical. Sub-network outputs are computed
/// once up front (without dropout) and reused every epoch.
pub fn train_fusion_head(model: &mut Model, dataset: &[Conversation], cfg: &TrainConfig) -> Result<TrainReport> {
    if !model.arch.is_two_stage() {
        return Err(Error::config(format!("{} has no fusion stage", model.name())));
    }
    model.freeze_subnetworks();
    let before: Vec<(String, String)> = model
        .store
        .iter()
        .filter(|(n, _)| !is_fusion_param(n))
        .map(|(n, _)| (n.to_string(), model.store.tensor_digest(n).unwrap()))
        .collect();
    let features = dataset
        .iter()
        .map(|c| model.fusion_features(c))
        .collect::<Result<Vec<_>>>()?;
    let report = run(model, dataset, cfg, |m, ctx, i| {
        let probs = m.fusion_forward(ctx, &features[i])?;
        mean_ce(ctx, probs, &dataset[i])
    })?;
    for (name, digest) in before {
        if model.store.tensor_digest(&name)? != digest {
            return Err(Error::Invariant(format!("frozen tensor `{name}` changed during fusion training")));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn frozen_parameters_are_untouched_by_optimizer() {
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::row(vec![0.1, 0.2])).unwrap();
        store.insert("b", Tensor::row(vec![0.3, 0.4])).unwrap();
        store.set_frozen("a", true).unwrap();
        for (_, p) in store.iter_mut() {
            p.grad = Tensor::row(vec![1.0, -1.0]);
        }
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let cfg = TrainConfig {
                optimizer: kind,
                learning_rate: 0.1,
                ..Default::default()
            };
            let mut s = store.clone();
            let mut opt = Optimizer::new(&cfg, &s);
            opt.step(&mut s);
            assert_eq!(s.get("a").unwrap().value.data(), &[0.1, 0.2]);
            assert_ne!(s.get("b").unwrap().value.data(), &[0.3, 0.4]);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::row(vec![1.0])).unwrap();
        store.get_mut("w").unwrap().grad = Tensor::row(vec![0.5]);
        let cfg = TrainConfig::default();
        let mut opt = Optimizer::new(&cfg, &store);
        opt.step(&mut store);
        let w = store.get("w").unwrap().value.data()[0];
        assert!((w - (1.0 - 1e-3)).abs() < 1e-10, "{w}");
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::row(vec![0.0, 0.0])).unwrap();
        store.get_mut("w").unwrap().grad = Tensor::row(vec![30.0, 40.0]);
        let before = clip_grad_norm(&mut store, 5.0);
        assert_eq!(before, 50.0);
        assert!((store.grad_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_ok());
    }
}
