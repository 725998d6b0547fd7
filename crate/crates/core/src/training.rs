//! Mini-batch Adam training with a held-out validation split and optional
//! early stopping on the validation loss.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::models::{bind_params, ModelSpec};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ParamSet;
use crate::rng::{rng_from, split};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    /// Binary cross-entropy; only meaningful on outputs in (0, 1).
    Bce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    pub enabled: bool,
    pub patience: usize,
    #[serde(default)]
    pub restore_best: bool,
}

impl EarlyStopping {
    pub const DISABLED: EarlyStopping = EarlyStopping {
        enabled: false,
        patience: 1,
        restore_best: false,
    };

    pub fn patience(patience: usize) -> Self {
        EarlyStopping {
            enabled: true,
            patience,
            restore_best: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_val_split")]
    pub val_split: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_early_stopping")]
    pub early_stopping: EarlyStopping,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
}

fn default_lr() -> f64 {
    0.01
}
fn default_epochs() -> usize {
    100
}
fn default_val_split() -> f64 {
    0.2
}
fn default_batch_size() -> usize {
    16
}
fn default_early_stopping() -> EarlyStopping {
    EarlyStopping::DISABLED
}
fn default_loss() -> LossKind {
    LossKind::Mse
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            epochs: default_epochs(),
            val_split: default_val_split(),
            batch_size: default_batch_size(),
            early_stopping: default_early_stopping(),
            seed: 0,
            loss: default_loss(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_split > 0.0 && self.val_split < 1.0) {
            return Err(Error::Config(format!("val_split must be in (0, 1), got {}", self.val_split)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.early_stopping.enabled && self.early_stopping.patience == 0 {
            return Err(Error::Config("early stopping patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// One supervised pair, both without a batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    /// 1-based epoch with the lowest validation loss (first one on ties).
    pub best_epoch: usize,
    pub wall_time_secs: f64,
}

impl TrainHistory {
    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// `epoch,train_loss,val_loss` rows followed by a `# summary` line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        s.push_str(&format!(
            "# summary: stopped_epoch={} best_epoch={} wall_time_secs={:.3}\n",
            self.stopped_epoch, self.best_epoch, self.wall_time_secs
        ));
        s
    }
}

/// Seeded shuffle of `0..n`; the last `round(n·val_split)` indices (at
/// least one, at most `n − 1`) form the validation side.
pub fn split_indices(n: usize, val_split: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 examples to split, got {n}")));
    }
    if !(val_split > 0.0 && val_split < 1.0) {
        return Err(Error::Config(format!("val_split must be in (0, 1), got {val_split}")));
    }
    let n_val = ((n as f64 * val_split).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(split(seed, u64::MAX)));
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

pub fn split_train_val<T: Clone>(items: &[T], val_split: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (tr, va) = split_indices(items.len(), val_split, seed)?;
    Ok((
        tr.into_iter().map(|i| items[i].clone()).collect(),
        va.into_iter().map(|i| items[i].clone()).collect(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Running state of the early-stopping rule.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
    seen: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
            seen: 0,
        }
    }

    /// Feeds the next validation loss; returns whether it strictly improved
    /// on the best seen so far.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.seen += 1;
        if self.seen == 1 || loss < self.best {
            self.best = loss;
            self.best_epoch = self.seen;
            self.wait = 0;
            true
        } else {
            self.wait += 1;
            false
        }
    }

    pub fn decision(&self) -> Decision {
        if self.wait >= self.patience {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Stop iff each of the last `patience` epochs failed to strictly improve on
/// the best validation loss seen before it.
pub fn early_stop_decision(val_losses: &[f64], patience: usize) -> Decision {
    let mut s = EarlyStopper::new(patience.max(1));
    for &l in val_losses {
        s.observe(l);
    }
    s.decision()
}

fn batch_of(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let inputs: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.input).collect();
    let targets: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.target).collect();
    Ok((Tensor::stack(&inputs)?, Tensor::stack(&targets)?))
}

fn batch_loss(spec: &ModelSpec, params: &ParamSet, samples: &[&Sample], loss: LossKind) -> Result<f64> {
    let (x, y) = batch_of(samples)?;
    let pred = spec.predict(params, &x)?;
    let l = match loss {
        LossKind::Mse => crate::ops::mse_loss(&pred, &y)?,
        LossKind::Bce => crate::ops::bce_loss(&pred, &y)?,
    };
    Ok(l as f64)
}

/// Mean loss over `samples` in inference mode.
pub fn evaluate_loss(
    spec: &ModelSpec,
    params: &ParamSet,
    samples: &[&Sample],
    batch_size: usize,
    loss: LossKind,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        total += batch_loss(spec, params, chunk, loss)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Inference-mode outputs, one per input, in order.
pub fn predict_all(
    spec: &ModelSpec,
    params: &ParamSet,
    inputs: &[&Tensor<f32>],
    batch_size: usize,
) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch_size.max(1)) {
        out.extend(spec.predict(params, &Tensor::stack(chunk)?)?.unstack());
    }
    Ok(out)
}

fn check_samples(spec: &ModelSpec, data: &[Sample]) -> Result<()> {
    for (i, s) in data.iter().enumerate() {
        if s.input.shape() != spec.input_shape() || s.target.shape() != spec.output_shape() {
            return Err(Error::Shape(format!(
                "example {i}: input {:?} / target {:?} do not match model {:?} → {:?}",
                s.input.shape(),
                s.target.shape(),
                spec.input_shape(),
                spec.output_shape()
            )));
        }
    }
    Ok(())
}

pub fn train(spec: &ModelSpec, params: ParamSet, data: &[Sample], cfg: &TrainConfig) -> Result<(ParamSet, TrainHistory)> {
    train_with_observer(spec, params, data, cfg, &mut |_| {})
}

/// [`train`], calling `observer` after every epoch.
pub fn train_with_observer(
    spec: &ModelSpec,
    mut params: ParamSet,
    data: &[Sample],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(ParamSet, TrainHistory)> {
    cfg.validate()?;
    spec.check_params(&params)?;
    check_samples(spec, data)?;
    let start = Instant::now();
    let (train_idx, val_idx) = split_indices(data.len(), cfg.val_split, cfg.seed)?;
    let val: Vec<&Sample> = val_idx.iter().map(|&i| &data[i]).collect();

    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let es = cfg.early_stopping;
    let mut stopper = EarlyStopper::new(es.patience.max(1));
    let mut best_params: Option<ParamSet> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let epoch_seed = split(cfg.seed, epoch as u64);
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_from(epoch_seed));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (x, y) = batch_of(&samples)?;
            let mut graph = Graph::<f32>::new();
            let vars = bind_params(&mut graph, &params);
            let xv = graph.constant(x);
            let yv = graph.constant(y);
            let mut drop_rng = rng_from(split(epoch_seed, b as u64));
            let pred = spec.forward(&mut graph, &vars, xv, true, &mut drop_rng)?;
            let loss = match cfg.loss {
                LossKind::Mse => graph.mse(pred, yv)?,
                LossKind::Bce => graph.bce(pred, yv)?,
            };
            let lv = graph.value(loss).item()? as f64;
            if !lv.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b + 1,
                    message: format!("training loss is {lv}"),
                });
            }
            let mut grads = graph.backward(loss)?;
            let g: ParamSet = vars
                .iter()
                .filter_map(|(name, &v)| grads.take(v).map(|t| (name.clone(), t)))
                .collect();
            adam.step(&mut params, &g)?;
            loss_sum += lv * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let val_loss = evaluate_loss(spec, &params, &val, cfg.batch_size, cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                message: format!("validation loss is {val_loss}"),
            });
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        history.push(rec);
        observer(&rec);
        let improved = stopper.observe(val_loss);
        if improved && es.enabled && es.restore_best {
            best_params = Some(params.clone());
        }
        if es.enabled && stopper.decision() == Decision::Stop {
            break;
        }
    }

    let history = TrainHistory {
        stopped_epoch: history.len(),
        best_epoch: stopper.best_epoch(),
        epochs: history,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((best_params.unwrap_or(params), history))
}
