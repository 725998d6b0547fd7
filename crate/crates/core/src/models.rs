//! Declarative layer stacks: the staged convolutional encoder, the rotation
//! regression head, the deconvolutional decoder, the binary classifier head,
//! and encoder weight transfer between them.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::params::ParamSet;
use crate::rng::{rng_from, split_str};
use crate::tensor::{Real, Tensor};

pub const ENCODER_BLOCK: &str = "encoder";
pub const ROTATION_BLOCK: &str = "rotation_head";
pub const DECODER_BLOCK: &str = "decoder";
pub const CLASSIFIER_BLOCK: &str = "classifier_head";

/// Width of the rotation head's hidden dense layer.
pub const ROTATION_HIDDEN: usize = 1024;
pub const ROTATION_DROPOUT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum LayerOpKind {
    Conv2d {
        kernel_h: usize,
        kernel_w: usize,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        padding: Padding,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Relu,
    Sigmoid,
    GlobalAvgPool,
    UpsampleNearest {
        factor: usize,
    },
    Dropout {
        rate: f64,
    },
}

impl LayerOpKind {
    pub fn conv3x3(in_ch: usize, out_ch: usize, stride: usize) -> Self {
        LayerOpKind::Conv2d {
            kernel_h: 3,
            kernel_w: 3,
            in_ch,
            out_ch,
            stride,
            padding: Padding::Same,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LayerOpKind::Conv2d {
                kernel_h,
                kernel_w,
                in_ch,
                out_ch,
                stride,
                ..
            } if kernel_h == 0 || kernel_w == 0 || in_ch == 0 || out_ch == 0 || stride == 0 => {
                Err(Error::Config(format!("invalid conv2d {self:?}")))
            }
            LayerOpKind::Dense { in_dim, out_dim } if in_dim == 0 || out_dim == 0 => {
                Err(Error::Config(format!("invalid dense {self:?}")))
            }
            LayerOpKind::UpsampleNearest { factor: 0 } => {
                Err(Error::Config("upsample factor must be >= 1".into()))
            }
            LayerOpKind::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// Per-example output shape for a per-example input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = || Error::Shape(format!("{self:?} cannot consume input shape {input:?}"));
        match *self {
            LayerOpKind::Conv2d {
                kernel_h,
                kernel_w,
                in_ch,
                out_ch,
                stride,
                padding,
            } => {
                let [h, w, c] = *input else { return Err(mismatch()) };
                if c != in_ch {
                    return Err(mismatch());
                }
                let (oh, ow) = match padding {
                    Padding::Same => (h.div_ceil(stride), w.div_ceil(stride)),
                    Padding::Valid => {
                        if kernel_h > h || kernel_w > w {
                            return Err(mismatch());
                        }
                        ((h - kernel_h) / stride + 1, (w - kernel_w) / stride + 1)
                    }
                };
                Ok(vec![oh, ow, out_ch])
            }
            LayerOpKind::Dense { in_dim, out_dim } => {
                if input != [in_dim] {
                    return Err(mismatch());
                }
                Ok(vec![out_dim])
            }
            LayerOpKind::Relu | LayerOpKind::Sigmoid | LayerOpKind::Dropout { .. } => Ok(input.to_vec()),
            LayerOpKind::GlobalAvgPool => {
                let [_, _, c] = *input else { return Err(mismatch()) };
                Ok(vec![c])
            }
            LayerOpKind::UpsampleNearest { factor } => {
                let [h, w, c] = *input else { return Err(mismatch()) };
                Ok(vec![h * factor, w * factor, c])
            }
        }
    }

    /// `(suffix, shape, fan_in, fan_out)` of each parameter the layer owns.
    fn slots(&self) -> Vec<(&'static str, Vec<usize>, usize, usize)> {
        match *self {
            LayerOpKind::Conv2d {
                kernel_h,
                kernel_w,
                in_ch,
                out_ch,
                ..
            } => {
                let area = kernel_h * kernel_w;
                vec![
                    ("kernel", vec![kernel_h, kernel_w, in_ch, out_ch], area * in_ch, area * out_ch),
                    ("bias", vec![out_ch], 0, 0),
                ]
            }
            LayerOpKind::Dense { in_dim, out_dim } => vec![
                ("weight", vec![in_dim, out_dim], in_dim, out_dim),
                ("bias", vec![out_dim], 0, 0),
            ],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub block: String,
    pub name: String,
    pub kind: LayerOpKind,
}

impl LayerSpec {
    pub fn new(block: &str, name: impl Into<String>, kind: LayerOpKind) -> Self {
        LayerSpec {
            block: block.to_string(),
            name: name.into(),
            kind,
        }
    }

    pub fn slot_name(&self, suffix: &str) -> String {
        format!("{}/{}/{}", self.block, self.name, suffix)
    }
}

/// Parameter slot of a [`ModelSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
}

/// An ordered, statically shape-checked layer stack. Shapes exclude the
/// batch axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    output_shape: Vec<usize>,
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Config(format!("invalid model input shape {input_shape:?}")));
        }
        let mut shape = input_shape.clone();
        let mut seen = std::collections::BTreeSet::new();
        for layer in &layers {
            layer.kind.validate()?;
            shape = layer
                .kind
                .output_shape(&shape)
                .map_err(|e| Error::Config(format!("layer {}/{}: {e}", layer.block, layer.name)))?;
            if !seen.insert((layer.block.clone(), layer.name.clone())) {
                return Err(Error::Config(format!("duplicate layer name {}/{}", layer.block, layer.name)));
            }
        }
        Ok(ModelSpec {
            input_shape,
            layers,
            output_shape: shape,
        })
    }

    /// `first` followed by `second`; shapes must meet in the middle.
    pub fn chain(first: &ModelSpec, second: &ModelSpec) -> Result<Self> {
        if first.output_shape != second.input_shape {
            return Err(Error::Config(format!(
                "cannot chain: {:?} output into {:?} input",
                first.output_shape, second.input_shape
            )));
        }
        let layers = first.layers.iter().chain(&second.layers).cloned().collect();
        ModelSpec::new(first.input_shape.clone(), layers)
    }

    /// Re-runs the static shape check (e.g. after deserialization).
    pub fn validate(&self) -> Result<()> {
        let rebuilt = ModelSpec::new(self.input_shape.clone(), self.layers.clone())?;
        if rebuilt.output_shape != self.output_shape {
            return Err(Error::Config("stored output shape is stale".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn slots(&self) -> Vec<ParamSlot> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.kind.slots().into_iter().map(|(suffix, shape, fan_in, fan_out)| ParamSlot {
                    name: l.slot_name(suffix),
                    shape,
                    fan_in,
                    fan_out,
                })
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.slots().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Glorot-uniform weights and zero biases. Each slot draws from its own
    /// stream keyed by name, so a slot's initial value does not depend on
    /// the rest of the stack.
    pub fn init_params<T: Real>(&self, seed: u64) -> ParamSet<T> {
        self.slots()
            .into_iter()
            .map(|slot| {
                let t = if slot.fan_in == 0 {
                    Tensor::zeros(slot.shape.clone())
                } else {
                    let limit = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
                    let mut rng = rng_from(split_str(seed, &slot.name));
                    Tensor::from_fn(slot.shape.clone(), |_| T::from_f64(rng.gen_range(-limit..limit)))
                };
                (slot.name, t)
            })
            .collect()
    }

    /// Errors unless `params` holds exactly this model's slots.
    pub fn check_params<T: Real>(&self, params: &ParamSet<T>) -> Result<()> {
        let slots = self.slots();
        let mut bad: Vec<String> = slots
            .iter()
            .filter(|s| params.get(&s.name).map(|t| t.shape() != s.shape.as_slice()).unwrap_or(true))
            .map(|s| s.name.clone())
            .collect();
        bad.extend(
            params
                .names()
                .filter(|n| !slots.iter().any(|s| s.name == *n))
                .map(|n| format!("{n} (unexpected)")),
        );
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Shape(format!("parameter set does not match model: {}", bad.join(", "))))
        }
    }

    /// Records the forward pass of a batch into `graph`.
    pub fn forward<T: Real, R: Rng + ?Sized>(
        &self,
        graph: &mut Graph<T>,
        params: &BTreeMap<String, Var>,
        input: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let get = |name: String| {
            params
                .get(&name)
                .copied()
                .ok_or_else(|| Error::Shape(format!("missing parameter '{name}'")))
        };
        let mut x = input;
        for layer in &self.layers {
            x = match layer.kind {
                LayerOpKind::Conv2d { stride, padding, .. } => {
                    let k = get(layer.slot_name("kernel"))?;
                    let b = get(layer.slot_name("bias"))?;
                    graph.conv2d(x, k, b, stride, padding)?
                }
                LayerOpKind::Dense { .. } => {
                    let w = get(layer.slot_name("weight"))?;
                    let b = get(layer.slot_name("bias"))?;
                    graph.dense(x, w, b)?
                }
                LayerOpKind::Relu => graph.relu(x),
                LayerOpKind::Sigmoid => graph.sigmoid(x),
                LayerOpKind::GlobalAvgPool => graph.global_avg_pool(x)?,
                LayerOpKind::UpsampleNearest { factor } => graph.upsample_nearest(x, factor)?,
                LayerOpKind::Dropout { rate } => graph.dropout(x, rate, training, rng)?,
            };
        }
        Ok(x)
    }

    /// Inference-mode forward pass of a batch (leading axis = batch).
    pub fn predict<T: Real>(&self, params: &ParamSet<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
        if batch.shape().get(1..) != Some(self.input_shape.as_slice()) {
            return Err(Error::Shape(format!(
                "model expects batches of {:?}, got {:?}",
                self.input_shape,
                batch.shape()
            )));
        }
        let mut graph = Graph::new();
        let vars = bind_constants(&mut graph, params);
        let x = graph.constant(batch.clone());
        // Dropout is the only stochastic layer and is inactive here.
        let mut rng = rng_from(0);
        let y = self.forward(&mut graph, &vars, x, false, &mut rng)?;
        Ok(graph.value(y).clone())
    }
}

/// Inserts every parameter as a trainable leaf.
pub fn bind_params<T: Real>(graph: &mut Graph<T>, params: &ParamSet<T>) -> BTreeMap<String, Var> {
    params.iter().map(|(k, v)| (k.to_string(), graph.param(v.clone()))).collect()
}

fn bind_constants<T: Real>(graph: &mut Graph<T>, params: &ParamSet<T>) -> BTreeMap<String, Var> {
    params.iter().map(|(k, v)| (k.to_string(), graph.constant(v.clone()))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_stages: usize,
    pub base_channels: usize,
    #[serde(default = "default_max_channels")]
    pub max_channels: usize,
    pub input_side: usize,
}

fn default_max_channels() -> usize {
    256
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stages == 0 || self.base_channels == 0 || self.max_channels == 0 {
            return Err(Error::Config(format!("invalid encoder config {self:?}")));
        }
        let step = 1usize
            .checked_shl(self.n_stages as u32)
            .ok_or_else(|| Error::Config("too many encoder stages".into()))?;
        if self.input_side == 0 || self.input_side % step != 0 {
            return Err(Error::Config(format!(
                "input side {} is not divisible by 2^{}",
                self.input_side, self.n_stages
            )));
        }
        Ok(())
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        (self.base_channels << stage.min(30)).min(self.max_channels).max(1)
    }

    /// `[S / 2^n, S / 2^n, channels of the last stage]`.
    pub fn output_shape(&self) -> Vec<usize> {
        let side = self.input_side >> self.n_stages;
        vec![side, side, self.stage_channels(self.n_stages - 1)]
    }
}

/// Stage `i`: 3×3 conv to `base·2^i` channels + ReLU, then a stride-2 3×3
/// conv + ReLU that halves the side.
pub fn encoder_spec(cfg: &EncoderConfig) -> Result<ModelSpec> {
    cfg.validate()?;
    let mut layers = Vec::new();
    let mut ch = 3;
    for i in 0..cfg.n_stages {
        let out = cfg.stage_channels(i);
        layers.push(LayerSpec::new(ENCODER_BLOCK, format!("stage{i}_conv"), LayerOpKind::conv3x3(ch, out, 1)));
        layers.push(LayerSpec::new(ENCODER_BLOCK, format!("stage{i}_relu"), LayerOpKind::Relu));
        layers.push(LayerSpec::new(ENCODER_BLOCK, format!("stage{i}_down"), LayerOpKind::conv3x3(out, out, 2)));
        layers.push(LayerSpec::new(ENCODER_BLOCK, format!("stage{i}_down_relu"), LayerOpKind::Relu));
        ch = out;
    }
    ModelSpec::new(vec![cfg.input_side, cfg.input_side, 3], layers)
}

pub fn build_encoder(cfg: &EncoderConfig, seed: u64) -> Result<(ModelSpec, ParamSet)> {
    let spec = encoder_spec(cfg)?;
    let params = spec.init_params(seed);
    Ok((spec, params))
}

fn feature_map(encoder_out: &[usize]) -> Result<(usize, usize, usize)> {
    match *encoder_out {
        [h, w, c] if h > 0 && w > 0 && c > 0 => Ok((h, w, c)),
        _ => Err(Error::Config(format!("expected an H×W×C feature map, got {encoder_out:?}"))),
    }
}

/// Global pooling → dense(1024) + ReLU → dropout 0.5 → dense(1), linear.
pub fn build_rotation_head(encoder_out: &[usize]) -> Result<ModelSpec> {
    let (_, _, c) = feature_map(encoder_out)?;
    let b = ROTATION_BLOCK;
    ModelSpec::new(
        encoder_out.to_vec(),
        vec![
            LayerSpec::new(b, "pool", LayerOpKind::GlobalAvgPool),
            LayerSpec::new(b, "hidden", LayerOpKind::Dense { in_dim: c, out_dim: ROTATION_HIDDEN }),
            LayerSpec::new(b, "hidden_relu", LayerOpKind::Relu),
            LayerSpec::new(b, "dropout", LayerOpKind::Dropout { rate: ROTATION_DROPOUT }),
            LayerSpec::new(b, "out", LayerOpKind::Dense { in_dim: ROTATION_HIDDEN, out_dim: 1 }),
        ],
    )
}

/// Decoder channel widths: `top_channels / 2^b` for each block `b`.
pub fn decoder_channels(n_blocks: usize, top_channels: usize) -> Result<Vec<usize>> {
    if n_blocks == 0 || !top_channels.is_power_of_two() || top_channels < (1usize << n_blocks.min(63)) {
        return Err(Error::Config(format!(
            "decoder needs n_blocks >= 1 and top_channels a power of two >= 2^n_blocks, got {n_blocks}, {top_channels}"
        )));
    }
    Ok((0..n_blocks).map(|b| top_channels >> b).collect())
}

/// `n_blocks` × (3×3 conv + ReLU + ×2 nearest upsample), then a linear 3×3
/// conv to 3 channels.
pub fn build_deconv_decoder(encoder_out: &[usize], n_blocks: usize, top_channels: usize) -> Result<ModelSpec> {
    let (_, _, mut ch) = feature_map(encoder_out)?;
    let b = DECODER_BLOCK;
    let mut layers = Vec::new();
    for (i, out) in decoder_channels(n_blocks, top_channels)?.into_iter().enumerate() {
        layers.push(LayerSpec::new(b, format!("block{i}_conv"), LayerOpKind::conv3x3(ch, out, 1)));
        layers.push(LayerSpec::new(b, format!("block{i}_relu"), LayerOpKind::Relu));
        layers.push(LayerSpec::new(b, format!("block{i}_up"), LayerOpKind::UpsampleNearest { factor: 2 }));
        ch = out;
    }
    layers.push(LayerSpec::new(b, "out", LayerOpKind::conv3x3(ch, 3, 1)));
    ModelSpec::new(encoder_out.to_vec(), layers)
}

/// Global pooling → dense(1) → logistic.
pub fn build_classifier_head(encoder_out: &[usize]) -> Result<ModelSpec> {
    let (_, _, c) = feature_map(encoder_out)?;
    let b = CLASSIFIER_BLOCK;
    ModelSpec::new(
        encoder_out.to_vec(),
        vec![
            LayerSpec::new(b, "pool", LayerOpKind::GlobalAvgPool),
            LayerSpec::new(b, "out", LayerOpKind::Dense { in_dim: c, out_dim: 1 }),
            LayerSpec::new(b, "sigmoid", LayerOpKind::Sigmoid),
        ],
    )
}

/// Fresh parameters for `dst` (seeded), with every encoder slot copied
/// bit-exactly from `src`.
pub fn transfer_encoder_weights(src: &ParamSet, dst: &ModelSpec, seed: u64) -> Result<ParamSet> {
    let prefix = format!("{ENCODER_BLOCK}/");
    let mut out: ParamSet = dst.init_params(seed);
    let mut offending = Vec::new();
    for slot in dst.slots().into_iter().filter(|s| s.name.starts_with(&prefix)) {
        match src.get(&slot.name) {
            Some(t) if t.shape() == slot.shape.as_slice() => {
                out.insert(slot.name, t.clone());
            }
            Some(t) => offending.push(format!("{} (shape {:?}, expected {:?})", slot.name, t.shape(), slot.shape)),
            None => offending.push(format!("{} (missing)", slot.name)),
        }
    }
    if offending.is_empty() {
        Ok(out)
    } else {
        Err(Error::Transfer(offending))
    }
}
