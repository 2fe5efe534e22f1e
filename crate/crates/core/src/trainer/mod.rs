//! Fine-tuning recipe: AdamW, linear warmup then linear decay, global
//! gradient-norm clipping, fixed epoch count, 2-class cross-entropy.

mod optim;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    batch_logits, forward, Checkpoint, ClassProbs, DropoutConfig, EvalMode, ParamVars, Sites,
    TokenMatrix,
};
use crate::numerics::{Graph, RngStream, Tensor};
use crate::tasks::Encoded;

pub use optim::{clip_grad_norm, AdamW, LinearWarmupDecay};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub train_batch: usize,
    pub eval_batch: usize,
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub train_dropout: DropoutConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            warmup_fraction: 0.10,
            epochs: 5,
            train_batch: 16,
            eval_batch: 32,
            clip_norm: 1.0,
            weight_decay: 0.01,
            train_dropout: DropoutConfig::baseline(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    /// Peak learning rate for training desk-scale models from scratch; the
    /// default suits fine-tuning pretrained weights and leaves a fresh model
    /// at chance after 5 epochs.
    pub const DESK_LEARNING_RATE: f64 = 3e-3;

    /// The default recipe with [`Self::DESK_LEARNING_RATE`].
    pub fn desk() -> Self {
        Self {
            learning_rate: Self::DESK_LEARNING_RATE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(
                "learning_rate must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction outside [0, 1)"));
        }
        if self.epochs == 0 || self.train_batch == 0 || self.eval_batch == 0 {
            return Err(Error::invalid("epochs and batch sizes must be positive"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        self.train_dropout.validate()
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.train_batch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Loss of the very first batch, before any update.
    pub initial_loss: f64,
}

impl TrainHistory {
    /// One `{"epoch":…,"loss":…,"accuracy":…}` line per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        crate::io::to_jsonl(&self.epochs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), self.to_jsonl()?.as_bytes())
    }
}

/// Positive prediction iff the positive-class probability exceeds 0.5; an
/// exact tie resolves to the negative class.
pub fn predict_positive(p_positive: f64) -> bool {
    p_positive > 0.5
}

pub fn accuracy_from_probs(probs: &[ClassProbs], labels: &[bool]) -> f64 {
    assert_eq!(probs.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, &l)| predict_positive(p[1]) == l)
        .count();
    correct as f64 / labels.len() as f64
}

/// Mean cross-entropy over `rows` and its gradient for every parameter.
///
/// Dropout masks come from `rng`, consumed in row order, so equal inputs give
/// equal gradients.
pub fn loss_and_grads(
    ckpt: &Checkpoint,
    tokens: &TokenMatrix,
    labels: &[bool],
    rows: &[usize],
    dropout: &DropoutConfig,
    active: bool,
    rng: RngStream,
) -> Result<(f64, Vec<ClassProbs>, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let pv = ParamVars::attach(&mut g, ckpt, true)?;
    let mut gen = rng.generator();
    let logits = batch_logits(
        &mut g,
        &pv,
        &ckpt.model_config,
        tokens,
        rows,
        Sites::new(dropout, active),
        &mut gen,
    )?;
    let targets: Vec<usize> = rows.iter().map(|&r| usize::from(labels[r])).collect();
    let loss = g.cross_entropy(logits, &targets)?;
    let probs = g
        .value(logits)
        .data()
        .chunks_exact(2)
        .map(crate::model::probs_from_logits)
        .collect();
    let loss_value = g.value(loss).data()[0];
    let mut grads = g.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, var) in &pv.named {
        let gt = grads.take(*var).expect("parameters require grad");
        out.insert(name.clone(), gt);
    }
    Ok((loss_value, probs, out))
}

/// Trains a copy of `ckpt` on `data`. Single-worker and fully determined by
/// `(ckpt, data, config)`.
pub fn train(
    ckpt: &Checkpoint,
    data: &Encoded,
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let n = data.len();
    let steps_per_epoch = config.steps_per_epoch(n);
    let schedule = LinearWarmupDecay::new(
        config.learning_rate,
        config.warmup_fraction,
        steps_per_epoch * config.epochs,
    );
    let mut model = ckpt.clone();
    model.training_seed = config.seed;
    let mut opt = AdamW::new(config.weight_decay);
    let mut shuffler = ChaCha8Rng::seed_from_u64(config.seed);
    shuffler.set_stream(u64::from_le_bytes(*b"shuffle\0"));
    let mut history = TrainHistory::default();
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffler);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.train_batch) {
            let (loss, probs, mut grads) = loss_and_grads(
                &model,
                &data.tokens,
                &data.labels,
                batch,
                &config.train_dropout,
                true,
                RngStream::new(config.seed, step as u64),
            )?;
            if step == 0 {
                history.initial_loss = loss;
            }
            loss_sum += loss;
            correct += probs
                .iter()
                .zip(batch)
                .filter(|(p, &r)| predict_positive(p[1]) == data.labels[r])
                .count();
            clip_grad_norm(grads.values_mut(), config.clip_norm);
            opt.step(&mut model.parameters, &grads, schedule.lr(step), |name| {
                !crate::model::is_norm_or_bias(name)
            });
            step += 1;
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / steps_per_epoch as f64,
            accuracy: correct as f64 / n as f64,
        });
    }
    model.provenance = format!(
        "trained {} epochs on {n} samples, peak lr {}, seed {}",
        config.epochs, config.learning_rate, config.seed
    );
    Ok((model, history))
}

/// Accuracy of a single deterministic forward pass.
pub fn evaluate_plain(ckpt: &Checkpoint, data: &Encoded) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let probs = forward(
        ckpt,
        &data.tokens,
        &DropoutConfig::deterministic(),
        EvalMode::Deterministic,
        RngStream::new(0, 0),
    )?;
    Ok(accuracy_from_probs(&probs, &data.labels))
}
