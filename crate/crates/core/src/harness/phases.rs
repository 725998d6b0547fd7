//! Pretext and classification phases and their metrics.


use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::metrics::{self, ScalarBatch, SsimParams};
use crate::models::{
    build_classifier_head, build_deconv_decoder, build_rotation_head, encoder_spec, transfer_encoder_weights, ModelSpec, ENCODER_BLOCK,
};
use crate::params::ParamSet;
use crate::pretext::{build_pretext_dataset, PretextExample, PretextTask, Target};
use crate::rng::{rng_from, split_str};
use crate::tensor::Tensor;
use crate::training::{self, EarlyStopping, Sample, TrainHistory};

use super::*;

fn pretext_sample(ex: &PretextExample, pre: &InputTransform) -> Result<Sample> {
    let target = match &ex.target {
        Target::Label(v) => Tensor::new(vec![1], vec![*v])?,
        Target::Image(img) => to_input(img, pre)?,
    };
    Ok(Sample {
        input: to_input(&ex.input, pre)?,
        target,
    })
}

/// Encoder followed by the task head (rotation head or decoder).
pub fn pretext_model(cfg: &RunConfig, task: PretextTask) -> Result<ModelSpec> {
    let enc_cfg = cfg.encoder_config();
    let enc = encoder_spec(&enc_cfg)?;
    let head = match task {
        PretextTask::Rotation => build_rotation_head(&enc_cfg.output_shape())?,
        PretextTask::Inpaint | PretextTask::Corrupt => {
            build_deconv_decoder(&enc_cfg.output_shape(), enc_cfg.n_stages, cfg.decoder.top_channels)?
        }
    };
    ModelSpec::chain(&enc, &head)
}

pub fn classifier_model(cfg: &RunConfig) -> Result<ModelSpec> {
    let enc_cfg = cfg.encoder_config();
    ModelSpec::chain(&encoder_spec(&enc_cfg)?, &build_classifier_head(&enc_cfg.output_shape())?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationMetrics {
    pub mse: f64,
    pub aad_scaled: f64,
    pub aad_degrees: f64,
    pub std_degrees: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTaskMetrics {
    pub mse_mean: f64,
    pub mse_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PretextMetrics {
    Rotation(RotationMetrics),
    Image {
        summary: ImageTaskMetrics,
        per_image_mse: Vec<f64>,
        per_image_ssim: Vec<f64>,
    },
}

/// Rotation metrics on `[0, 1]` labels. Predictions are clamped into the
/// label range first.
pub fn rotation_metrics(labels: &[f64], predictions: &[f64]) -> Result<RotationMetrics> {
    let clamped = predictions.iter().map(|p| p.clamp(0.0, 1.0)).collect();
    let batch = ScalarBatch::new(labels.to_vec(), clamped)?;
    Ok(RotationMetrics {
        mse: metrics::mse(&batch),
        aad_scaled: metrics::aad(&batch, false)?,
        aad_degrees: metrics::aad(&batch, true)?,
        std_degrees: 360.0 * metrics::std_abs_err(&batch),
    })
}

/// Per-image MSE and SSIM between canonical targets and predictions.
pub fn image_task_metrics(targets: &[Image], predictions: &[Image], ssim: &SsimParams) -> Result<PretextMetrics> {
    let mse = metrics::image_batch_mse(targets, predictions)?;
    let ssims = targets
        .iter()
        .zip(predictions)
        .map(|(t, p)| metrics::ssim(t, p, ssim))
        .collect::<Result<Vec<_>>>()?;
    let (mse_mean, mse_std) = metrics::mean_std(&mse.per_image);
    let (ssim_mean, ssim_std) = metrics::mean_std(&ssims);
    Ok(PretextMetrics::Image {
        summary: ImageTaskMetrics {
            mse_mean,
            mse_std,
            ssim_mean,
            ssim_std,
        },
        per_image_mse: mse.per_image,
        per_image_ssim: ssims,
    })
}

/// Scores a trained pretext model. Image predictions are deprocessed (and
/// clamped to the pixel range) before comparison with the canonical target.
pub fn evaluate_pretext(
    spec: &ModelSpec,
    params: &ParamSet,
    examples: &[PretextExample],
    pre: &InputTransform,
    ssim: &SsimParams,
    batch_size: usize,
) -> Result<PretextMetrics> {
    let inputs = examples.iter().map(|e| to_input(&e.input, pre)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
    let preds = training::predict_all(spec, params, &refs, batch_size)?;
    let task = examples.first().map(|e| e.task).ok_or_else(|| Error::Usage("no pretext test examples".into()))?;
    if task.predicts_image() {
        let mut targets = Vec::with_capacity(examples.len());
        let mut images = Vec::with_capacity(examples.len());
        for (ex, p) in examples.iter().zip(&preds) {
            let Target::Image(t) = &ex.target else {
                return Err(Error::Usage("mixed pretext targets".into()));
            };
            p.check_finite("pretext prediction")?;
            targets.push(t.clone());
            images.push(pre.decode(p)?);
        }
        image_task_metrics(&targets, &images, ssim)
    } else {
        let mut labels = Vec::with_capacity(examples.len());
        for ex in examples {
            let Target::Label(v) = ex.target else {
                return Err(Error::Usage("mixed pretext targets".into()));
            };
            labels.push(v as f64);
        }
        let p: Vec<f64> = preds.iter().map(|t| t.data()[0] as f64).collect();
        Ok(PretextMetrics::Rotation(rotation_metrics(&labels, &p)?))
    }
}

/// Fresh encoder + head trained on `examples`.
pub fn train_pretext(
    cfg: &RunConfig,
    task: PretextTask,
    examples: &[PretextExample],
    pre: &InputTransform,
    seed: u64,
) -> Result<(ModelSpec, ParamSet, TrainHistory)> {
    let spec = pretext_model(cfg, task)?;
    let samples = examples.iter().map(|e| pretext_sample(e, pre)).collect::<Result<Vec<_>>>()?;
    let params = spec.init_params(split_str(seed, &format!("{task}/init")));
    let tc = cfg
        .pretext_train
        .to_train_config(split_str(seed, &format!("{task}/train")), EarlyStopping::DISABLED);
    let (params, history) = training::train(&spec, params, &samples, &tc)?;
    Ok((spec, params, history))
}

#[derive(Clone, Debug)]
pub struct PretextOutcome {
    pub task: PretextTask,
    /// Full encoder + head parameters.
    pub params: ParamSet,
    pub metrics: PretextMetrics,
    pub history: TrainHistory,
}

impl PretextOutcome {
    pub fn encoder(&self) -> ParamSet {
        self.params.filter_prefix(&format!("{ENCODER_BLOCK}/"))
    }
}

/// Splits the pool into pretext training and held-out images.
pub fn pretext_holdout(n: usize, count: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let count = count.min(n.saturating_sub(2));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(split_str(seed, "pretext/holdout")));
    let train = idx.split_off(count);
    (train, idx)
}

/// Builds the pretext pairs from the training pool, trains, and scores the
/// model on the held-out slice.
pub fn run_pretext_phase(
    cfg: &RunConfig,
    task: PretextTask,
    pool: &[Image],
    pre: &InputTransform,
    seed: u64,
) -> Result<PretextOutcome> {
    let run = || -> Result<PretextOutcome> {
        let (tr, te) = pretext_holdout(pool.len(), cfg.pretext_test_count, seed);
        if te.is_empty() {
            return Err(Error::Config("pretext test slice is empty".into()));
        }
        let pick = |idx: &[usize]| idx.iter().map(|&i| pool[i].clone()).collect::<Vec<_>>();
        let resolved = cfg.pretext.resolve(cfg.image_side);
        let train_ds = build_pretext_dataset(&pick(&tr), task, &resolved, split_str(seed, &format!("{task}/data")))?;
        let test_ds = build_pretext_dataset(&pick(&te), task, &resolved, split_str(seed, &format!("{task}/test")))?;
        let (spec, params, history) = train_pretext(cfg, task, &train_ds.examples, pre, seed)?;
        let metrics = evaluate_pretext(&spec, &params, &test_ds.examples, pre, &cfg.ssim, cfg.pretext_train.batch_size)?;
        Ok(PretextOutcome {
            task,
            params,
            metrics,
            history,
        })
    };
    run().map_err(|e| e.in_phase(format!("pretext phase '{task}'")))
}

pub fn classifier_samples(examples: &[LabeledExample], pre: &InputTransform) -> Result<Vec<Sample>> {
    examples
        .iter()
        .map(|e| {
            Ok(Sample {
                input: to_input(&e.image, pre)?,
                target: Tensor::new(vec![1], vec![e.label as f32])?,
            })
        })
        .collect()
}

/// Thresholded accuracy of a classifier on labelled images.
pub fn evaluate_classifier(
    spec: &ModelSpec,
    params: &ParamSet,
    examples: &[LabeledExample],
    pre: &InputTransform,
    batch_size: usize,
) -> Result<f64> {
    let inputs = examples.iter().map(|e| to_input(&e.image, pre)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
    let preds = training::predict_all(spec, params, &refs, batch_size)?;
    let y = examples.iter().map(|e| e.label as f64).collect();
    let y_hat = preds.iter().map(|t| t.data()[0] as f64).collect();
    metrics::accuracy_pct(&ScalarBatch::new(y, y_hat)?, Some(0.5))
}

#[derive(Clone, Debug)]
pub struct ClassificationOutcome {
    pub accuracy_pct: f64,
    pub params: ParamSet,
    pub history: TrainHistory,
}

/// Trains a classifier whose encoder starts from `init` (or fresh weights).
pub fn train_classifier(
    cfg: &RunConfig,
    init: Option<&ParamSet>,
    regime: Regime,
    train: &[LabeledExample],
    pre: &InputTransform,
    seed: u64,
) -> Result<(ModelSpec, ParamSet, TrainHistory)> {
    let spec = classifier_model(cfg)?;
    let init_seed = split_str(seed, "classifier/init");
    let params = match init {
        Some(src) => transfer_encoder_weights(src, &spec, init_seed)?,
        None => spec.init_params(init_seed),
    };
    let samples = classifier_samples(train, pre)?;
    let ct = &cfg.classifier_train;
    let tc = ct.to_train_config(split_str(seed, "classifier/train"), regime.early_stopping(ct.restore_best));
    let (params, history) = training::train(&spec, params, &samples, &tc)?;
    Ok((spec, params, history))
}

/// [`train_classifier`], then one read of the test set to score it.
pub fn run_classification_phase(
    cfg: &RunConfig,
    init: Option<&ParamSet>,
    regime: Regime,
    train: &[LabeledExample],
    test: &TestSet,
    pre: &InputTransform,
    seed: u64,
) -> Result<ClassificationOutcome> {
    let (spec, params, history) = train_classifier(cfg, init, regime, train, pre, seed)?;
    let accuracy_pct = evaluate_classifier(&spec, &params, test.read(), pre, cfg.classifier_train.batch_size)?;
    Ok(ClassificationOutcome {
        accuracy_pct,
        params,
        history,
    })
}
