//! Mini-batch AdamW fine-tuning of the whole classifier.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::model::classifier::MambaClassifier;
use crate::model::config::param_specs;
use crate::ops;
use crate::optim::{AdamWConfig, AdamWState};
use crate::seed;
use crate::tensor::{s, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a validation-loss improvement before stopping; 0 never stops early.
    pub patience: usize,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 16,
            epochs: 20,
            patience: 3,
            weight_decay: 0.01,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and ≥ 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be ≥ 0, got {}", self.weight_decay));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return bad(format!("grad_clip must be ≥ 0, got {}", self.grad_clip));
        }
        Ok(())
    }
}

/// One encoded training or evaluation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    /// Snapshot with the lowest validation loss.
    pub model: MambaClassifier<T>,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch the snapshot was taken after.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Loss and parameter gradients for a single example.
fn example_grads<T: Scalar>(m: &MambaClassifier<T>, ex: &Example) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut tape = m.new_tape();
    let vars = m.bind(&mut tape, true);
    let logits = m.forward_on_tape(&mut tape, &vars, &ex.ids, &ex.mask)?;
    let loss = tape.softmax_cross_entropy(logits, ex.label)?;
    let value = tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
    let mut grads = tape.backward(loss)?;
    let out = vars
        .iter()
        .map(|&v: &Var| grads.take(v).expect("every param has a gradient"))
        .collect();
    Ok((value, out))
}

/// Mean loss and mean gradient over `batch`. Per-example work runs in
/// parallel; the reduction is in batch order so results do not depend on
/// thread scheduling.
fn batch_grads<T: Scalar>(m: &MambaClassifier<T>, batch: &[&Example]) -> Result<(f64, Vec<Tensor<T>>)> {
    let per: Vec<(f64, Vec<Tensor<T>>)> = batch
        .par_iter()
        .map(|ex| example_grads(m, ex))
        .collect::<Result<_>>()?;
    let mut it = per.into_iter();
    let (mut loss, mut acc) = it.next().expect("non-empty batch");
    for (l, g) in it {
        loss += l;
        for (a, b) in acc.iter_mut().zip(&g) {
            a.add_assign(b);
        }
    }
    let inv = T::one() / s(batch.len() as f64);
    for a in &mut acc {
        a.scale_assign(inv);
    }
    Ok((loss / batch.len() as f64, acc))
}

fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| {
            let v = v.to_f64().unwrap_or(f64::NAN);
            v * v
        })
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let k: T = s(max_norm / norm);
        for g in grads {
            g.scale_assign(k);
        }
    }
}

/// Class probabilities for every example, in input order.
pub fn predict_proba<T: Scalar>(m: &MambaClassifier<T>, examples: &[Example]) -> Result<Vec<Vec<f64>>> {
    examples
        .par_iter()
        .map(|ex| {
            let logits = m.forward(&ex.ids, &ex.mask)?;
            let logits: Vec<f64> = logits.to_f64_vec();
            Ok(ops::softmax(&logits))
        })
        .collect()
}

/// Index of the largest probability (first on ties).
pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Mean cross-entropy and accuracy over `examples`.
pub fn evaluate<T: Scalar>(m: &MambaClassifier<T>, examples: &[Example]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let probs = predict_proba(m, examples)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (p, ex) in probs.iter().zip(examples) {
        let pl = *p.get(ex.label).ok_or(Error::LabelOutOfRange {
            label: ex.label,
            classes: p.len(),
        })?;
        loss -= pl.max(f64::MIN_POSITIVE).ln();
        if argmax(p) == ex.label {
            correct += 1;
        }
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn diverged(epoch: usize, loss: f64) -> Error {
    Error::DivergedLoss { epoch, loss }
}

/// Trains `model` on `train`, selecting the snapshot with the lowest loss
/// on `val`. `on_epoch` sees each record as it is produced.
pub fn train<T: Scalar>(
    model: MambaClassifier<T>,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let k = model.config.n_classes;
    if let Some(ex) = train.iter().chain(val).find(|ex| ex.label >= k) {
        return Err(Error::LabelOutOfRange {
            label: ex.label,
            classes: k,
        });
    }

    let specs = param_specs(&model.config);
    let shapes: Vec<&[usize]> = specs.iter().map(|p| p.shape.as_slice()).collect();
    let decay = specs
        .iter()
        .map(|p| p.shape.len() >= 2 && !p.name.ends_with("a_log"))
        .collect();
    let adam = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let mut opt = AdamWState::new(adam, &shapes).with_decay_mask(decay);
    let mut rng = seed::rng_for(cfg.seed, "shuffle");

    let mut model = model;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = batch_grads(&model, &batch).map_err(|e| match e {
                Error::NonFinite(_) => diverged(epoch, f64::NAN),
                e => e,
            })?;
            if !loss.is_finite() {
                return Err(diverged(epoch, loss));
            }
            total += loss * batch.len() as f64;
            clip_global_norm(&mut grads, cfg.grad_clip);
            let mut params = model.tensors_mut();
            opt.step(&mut params, &grads).map_err(|e| match e {
                Error::NonFinite(_) => diverged(epoch, loss),
                e => e,
            })?;
        }
        let train_loss = total / train.len() as f64;
        let (val_loss, val_accuracy) = evaluate(&model, val)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, val_loss));
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        };
        if let Some(f) = on_epoch.as_deref_mut() {
            f(&rec);
        }
        history.push(rec);

        if val_loss < best_loss {
            best_loss = val_loss;
            best = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        stopped_early,
    })
}
