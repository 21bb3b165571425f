//! Training of the graph encoder and projector against the frozen verifier.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::bench::balanced_accuracy;
use crate::data::Label;
use crate::error::{Error, Result};
use crate::verifier::{GraphCheck, Prepared};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub num_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            num_epochs: 20,
            learning_rate: 1e-5,
            weight_decay: 0.05,
            warmup_epochs: 2,
            early_stop_patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset matching `ModelConfig::desk`.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.num_epochs == 0 || self.warmup_epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::validation("train config", "batch_size, num_epochs, warmup_epochs and patience must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay > 0.0) {
            return Err(Error::validation("train config", "learning_rate and weight_decay must be positive"));
        }
        if self.early_stop_patience >= self.num_epochs {
            return Err(Error::validation("early_stop_patience", "must be below num_epochs"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: (usize, usize, usize),
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { ratios: (6, 2, 2), seed: 0 }
    }
}

/// Seeded shuffle, then `floor(n*val/10)` validation and `floor(n*test/10)`
/// test items; the remainder trains.
pub fn split_dataset<T: Clone>(samples: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (a, b, c) = spec.ratios;
    if a + b + c != 10 {
        return Err(Error::validation("split ratios", "must sum to 10"));
    }
    if samples.len() < 5 {
        return Err(Error::validation("samples", format!("need at least 5, got {}", samples.len())));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (n_val, n_test) = (n * b / 10, n * c / 10);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let val = pick(&order[..n_val]);
    let test = pick(&order[n_val..n_val + n_test]);
    let train = pick(&order[n_val + n_test..]);
    Ok((train, val, test))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<ParamId, Tensor>,
    v: BTreeMap<ParamId, Tensor>,
}

/// One decoupled-decay Adam step over `grads`. Decay touches only parameters
/// flagged for it (weights, not biases or norm gains).
pub fn optimizer_step(store: &mut ParamStore, grads: &[(ParamId, Tensor)], state: &mut AdamState, opt: &AdamW) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - opt.beta1.powi(t), 1.0 - opt.beta2.powi(t));
    for (id, g) in grads {
        let p = store.get_mut(*id);
        if !p.trainable {
            return Err(Error::Contract(format!("gradient for frozen parameter {}", p.name)));
        }
        if p.value.shape() != g.shape() {
            return Err(Error::shape("optimizer_step", p.value.shape(), g.shape()));
        }
        let m = state.m.entry(*id).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v.entry(*id).or_insert_with(|| Tensor::zeros(g.shape()));
        if m.shape() != g.shape() || v.shape() != g.shape() {
            return Err(Error::shape("optimizer state", m.shape(), g.shape()));
        }
        let decay = if p.decay { opt.lr * opt.weight_decay } else { 0.0 };
        let (m, v, w) = (m.data_mut(), v.data_mut(), p.value.data_mut());
        for i in 0..w.len() {
            let gi = g.data()[i];
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
            w[i] -= decay * w[i];
            w[i] -= opt.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + opt.eps);
        }
    }
    Ok(())
}

/// Patience counter over a metric where larger is better.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records one epoch's value; returns whether it is a new best.
    pub fn update(&mut self, value: f64) -> bool {
        if self.best.is_none_or(|b| value > b) {
            self.best = Some(value);
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_bacc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    /// Mean eval-mode training loss before the first update.
    pub initial_loss: f64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_bacc: f64,
    pub stopped_early: bool,
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,val_bacc,lr")?;
    for r in history {
        writeln!(f, "{},{},{},{}", r.epoch, r.train_loss, r.val_bacc, r.lr)?;
    }
    f.flush()?;
    Ok(())
}

fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut x = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Eval-mode predictions, computed in parallel and returned in input order.
pub fn predict_all(model: &GraphCheck, data: &[Prepared]) -> Result<Vec<Label>> {
    data.par_iter()
        .map(|p| model.classify_prepared(p).map(|r| r.label))
        .collect()
}

pub fn mean_loss(model: &GraphCheck, data: &[Prepared]) -> Result<f64> {
    let losses: Vec<f64> = data.par_iter().map(|p| model.loss(p)).collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub fn evaluate_bacc(model: &GraphCheck, data: &[Prepared]) -> Result<f64> {
    let pred = predict_all(model, data)?;
    let gold: Vec<Label> = data.iter().map(|p| p.label).collect();
    balanced_accuracy(&gold, &pred)
}

/// Trains in place and leaves the model holding the best-validation weights.
pub fn train(model: &mut GraphCheck, train: &[Prepared], val: &[Prepared], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::validation("dataset", "train and validation splits must be non-empty"));
    }
    if !model.backbone_frozen() {
        return Err(Error::Contract("verifier backbone must be frozen before training".into()));
    }
    let trainable = model.params.trainable_ids();
    let initial_loss = mean_loss(model, train)?;
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let warmup_steps = (cfg.warmup_epochs * steps_per_epoch) as f64;
    let mut state = AdamState::default();
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best: Option<(usize, ParamStore)> = None;
    let mut history = Vec::new();
    let mut global_step = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.num_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, epoch, usize::MAX)));
        let mut loss_sum = 0.0;
        let mut lr = cfg.learning_rate;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let model_ref: &GraphCheck = model;
            let results: Vec<(f64, Vec<(ParamId, Tensor)>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, epoch, i));
                    model_ref.loss_and_grads(&train[i], true, &mut rng)
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} batch {b}: {m}")),
                    other => other,
                })?;
            let mut acc: BTreeMap<ParamId, Tensor> = BTreeMap::new();
            for (loss, grads) in &results {
                loss_sum += loss;
                for (id, g) in grads {
                    match acc.get_mut(id) {
                        Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                        None => {
                            acc.insert(*id, g.clone());
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<(ParamId, Tensor)> = acc
                .into_iter()
                .map(|(id, mut g)| {
                    g.data_mut().iter_mut().for_each(|x| *x *= scale);
                    (id, g)
                })
                .collect();
            lr = cfg.learning_rate * ((global_step + 1) as f64 / warmup_steps).min(1.0);
            optimizer_step(&mut model.params, &grads, &mut state, &AdamW::new(lr, cfg.weight_decay))?;
            global_step += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: mean training loss is {train_loss}")));
        }
        let val_bacc = evaluate_bacc(model, val)?;
        log::info!("epoch {epoch}: train_loss {train_loss:.5} val_bacc {val_bacc:.4} lr {lr:.3e}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_bacc,
            lr,
        });
        if stopper.update(val_bacc) {
            best = Some((epoch, snapshot(&model.params, &trainable)));
        }
        if stopper.should_stop() {
            stopped_early = epoch < cfg.num_epochs;
            break;
        }
    }
    let (best_epoch, weights) = best.expect("at least one epoch ran");
    model.params.load_from(&weights)?;
    Ok(TrainOutcome {
        initial_loss,
        best_val_bacc: stopper.best().unwrap_or(0.0),
        history,
        best_epoch,
        stopped_early,
    })
}

fn snapshot(store: &ParamStore, ids: &[ParamId]) -> ParamStore {
    let mut out = ParamStore::new();
    for &id in ids {
        let p = store.get(id);
        out.insert(&p.name, p.value.clone(), p.trainable, p.decay).expect("unique names");
    }
    out
}
