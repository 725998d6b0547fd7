//! Forward and backward kernels for every layer kind.
//!
//! Image tensors are NHWC. The public forward functions accept either a
//! single example (`H×W×C`, `N`) or a batch with a leading axis; the graph in
//! [`crate::autograd`] always works batched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output side `ceil(H / stride)`, zero padding split evenly with the
    /// extra row/column at the bottom/right.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub f: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [n, h, w, c] = *input else {
            return Err(Error::Shape(format!(
                "conv2d input must be N×H×W×C, got {input:?}"
            )));
        };
        let [kh, kw, kc, f] = *kernel else {
            return Err(Error::Shape(format!(
                "conv2d kernels must be Kh×Kw×C×F, got {kernel:?}"
            )));
        };
        if kc != c {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input has {c}, kernels expect {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be >= 1".into()));
        }
        let (ho, wo, pad_top, pad_left) = match padding {
            Padding::Same => {
                let ho = h.div_ceil(stride);
                let wo = w.div_ceil(stride);
                let pad_h = ((ho - 1) * stride + kh).saturating_sub(h);
                let pad_w = ((wo - 1) * stride + kw).saturating_sub(w);
                (ho, wo, pad_h / 2, pad_w / 2)
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::Shape(format!(
                        "valid conv2d: kernel {kh}×{kw} larger than input {h}×{w}"
                    )));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(ConvGeom {
            n,
            h,
            w,
            c,
            kh,
            kw,
            f,
            stride,
            ho,
            wo,
            pad_top,
            pad_left,
        })
    }

    fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }

    /// Input row/column for output position `o` and kernel tap `k`, or
    /// `None` when it falls in the zero padding.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let patch = g.patch();
    let mut cols = vec![T::ZERO; g.rows() * patch];
    let mut row = 0;
    for b in 0..g.n {
        let img = &x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pad_left, g.w) else {
                            continue;
                        };
                        let s = (iy * g.w + ix) * g.c;
                        let d = (ky * g.kw + kx) * g.c;
                        dst[d..d + g.c].copy_from_slice(&img[s..s + g.c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T]) -> Vec<T> {
    let patch = g.patch();
    let mut x = vec![T::ZERO; g.n * g.h * g.w * g.c];
    let mut row = 0;
    for b in 0..g.n {
        let img = &mut x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pad_left, g.w) else {
                            continue;
                        };
                        let d = (iy * g.w + ix) * g.c;
                        let s = (ky * g.kw + kx) * g.c;
                        for (a, &v) in img[d..d + g.c].iter_mut().zip(&src[s..s + g.c]) {
                            *a += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

fn broadcast_bias<T: Real>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o = b;
        }
    }
}

fn column_sums<T: Real>(m: &[T], cols: usize) -> Vec<T> {
    let mut s = vec![T::ZERO; cols];
    for row in m.chunks(cols) {
        for (a, &v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    s
}

/// Batched convolution; returns the output and the im2col buffer needed by
/// the backward pass.
pub(crate) fn conv2d_batched<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, ConvGeom, Vec<T>)> {
    let g = ConvGeom::new(input.shape(), kernels.shape(), stride, padding)?;
    if bias.shape() != [g.f] {
        return Err(Error::Shape(format!(
            "conv2d bias must have shape [{}], got {:?}",
            g.f,
            bias.shape()
        )));
    }
    input.check_finite("conv2d input")?;
    let cols = im2col(&g, input.data());
    let mut out = vec![T::ZERO; g.rows() * g.f];
    broadcast_bias(&mut out, bias.data());
    matmul_into(g.rows(), g.patch(), g.f, &cols, false, kernels.data(), false, T::ONE, &mut out);
    let out = Tensor::new(vec![g.n, g.ho, g.wo, g.f], out)?;
    Ok((out, g, cols))
}

/// Gradients of a convolution: `(d_input, d_kernels, d_bias)`.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    cols: &[T],
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let dy = grad_out.data();
    let mut dk = vec![T::ZERO; g.patch() * g.f];
    matmul_into(g.patch(), g.rows(), g.f, cols, true, dy, false, T::ZERO, &mut dk);
    let db = column_sums(dy, g.f);
    let dx = need_input.then(|| {
        let mut dcols = vec![T::ZERO; g.rows() * g.patch()];
        matmul_into(g.rows(), g.f, g.patch(), dy, false, kernels.data(), true, T::ZERO, &mut dcols);
        Tensor::new(vec![g.n, g.h, g.w, g.c], col2im(g, &dcols)).unwrap()
    });
    (
        dx,
        Tensor::new(kernels.shape().to_vec(), dk).unwrap(),
        Tensor::new(vec![g.f], db).unwrap(),
    )
}

fn with_batch<T: Real>(
    input: &Tensor<T>,
    single_rank: usize,
    f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    if input.rank() == single_rank {
        let mut shape = vec![1];
        shape.extend_from_slice(input.shape());
        let out = f(&input.clone().reshape(shape)?)?;
        let inner = out.shape()[1..].to_vec();
        out.reshape(inner)
    } else if input.rank() == single_rank + 1 {
        f(input)
    } else {
        Err(Error::Shape(format!(
            "expected rank {single_rank} or {}, got {:?}",
            single_rank + 1,
            input.shape()
        )))
    }
}

/// 2-D cross-correlation of an `H×W×C` image (or `N×H×W×C` batch) with
/// `Kh×Kw×C×F` kernels.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    with_batch(input, 3, |x| {
        conv2d_batched(x, kernels, bias, stride, padding).map(|r| r.0)
    })
}

pub(crate) fn dense_batched<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, d] = *input.shape() else {
        return Err(Error::Shape(format!("dense input must be B×N, got {:?}", input.shape())));
    };
    let [wd, m] = *weights.shape() else {
        return Err(Error::Shape(format!("dense weights must be N×M, got {:?}", weights.shape())));
    };
    if wd != d || bias.shape() != [m] {
        return Err(Error::Shape(format!(
            "dense: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let mut out = vec![T::ZERO; n * m];
    broadcast_bias(&mut out, bias.data());
    matmul_into(n, d, m, input.data(), false, weights.data(), false, T::ONE, &mut out);
    Tensor::new(vec![n, m], out)
}

pub(crate) fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let m = weights.shape()[1];
    let dy = grad_out.data();
    let mut dw = vec![T::ZERO; d * m];
    matmul_into(d, n, m, input.data(), true, dy, false, T::ZERO, &mut dw);
    let db = column_sums(dy, m);
    let dx = need_input.then(|| {
        let mut dx = vec![T::ZERO; n * d];
        matmul_into(n, m, d, dy, false, weights.data(), true, T::ZERO, &mut dx);
        Tensor::new(vec![n, d], dx).unwrap()
    });
    (
        dx,
        Tensor::new(vec![d, m], dw).unwrap(),
        Tensor::new(vec![m], db).unwrap(),
    )
}

/// `input · weights + bias` for a vector of length N (or a B×N batch).
pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    with_batch(input, 1, |x| dense_batched(x, weights, bias))
}

pub(crate) fn global_avg_pool_batched<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w, c] = *input.shape() else {
        return Err(Error::Shape(format!(
            "global_avg_pool input must be N×H×W×C, got {:?}",
            input.shape()
        )));
    };
    let x = input.data();
    let mut out = Vec::with_capacity(n * c);
    for b in 0..n {
        // f64 accumulation keeps f32 pooling within 1e-6 of a naive f64 mean.
        let mut acc = vec![0.0f64; c];
        for px in x[b * h * w * c..(b + 1) * h * w * c].chunks(c) {
            for (a, v) in acc.iter_mut().zip(px) {
                *a += v.to_f64();
            }
        }
        out.extend(acc.into_iter().map(|s| T::from_f64(s / (h * w) as f64)));
    }
    Tensor::new(vec![n, c], out)
}

pub(crate) fn global_avg_pool_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, h, w, c) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let scale = T::from_f64(1.0 / (h * w) as f64);
    let dy = grad_out.data();
    let mut dx = Vec::with_capacity(n * h * w * c);
    for b in 0..n {
        let g: Vec<T> = dy[b * c..(b + 1) * c].iter().map(|&v| v * scale).collect();
        for _ in 0..h * w {
            dx.extend_from_slice(&g);
        }
    }
    Tensor::new(input_shape.to_vec(), dx).unwrap()
}

/// Per-channel mean over all spatial positions: `H×W×C → C`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    with_batch(input, 3, global_avg_pool_batched)
}

pub(crate) fn upsample_batched<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::Parameter("upsample factor must be >= 1".into()));
    }
    let [n, h, w, c] = *input.shape() else {
        return Err(Error::Shape(format!("upsample input must be N×H×W×C, got {:?}", input.shape())));
    };
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for i in 0..oh {
            let row = &x[(b * h + i / factor) * w * c..(b * h + i / factor + 1) * w * c];
            for j in 0..ow {
                let s = (j / factor) * c;
                out.extend_from_slice(&row[s..s + c]);
            }
        }
    }
    Tensor::new(vec![n, oh, ow, c], out)
}

pub(crate) fn upsample_backward<T: Real>(input_shape: &[usize], factor: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, h, w, c) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (oh, ow) = (h * factor, w * factor);
    let dy = grad_out.data();
    let mut dx = vec![T::ZERO; n * h * w * c];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let s = ((b * oh + i) * ow + j) * c;
                let d = ((b * h + i / factor) * w + j / factor) * c;
                for k in 0..c {
                    dx[d + k] += dy[s + k];
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx).unwrap()
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    with_batch(input, 3, |x| upsample_batched(x, factor))
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

pub fn sigmoid<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| {
        // Split by sign so exp never overflows.
        if v >= T::ZERO {
            T::ONE / (T::ONE + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::ONE + e)
        }
    })
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("dropout rate must be in [0, 1), got {rate}")))
    }
}

/// Inverted-dropout multiplier per element: `0` or `1 / (1 - rate)`.
pub(crate) fn dropout_mask<T: Real, R: Rng + ?Sized>(numel: usize, rate: f64, rng: &mut R) -> Result<Vec<T>> {
    check_rate(rate)?;
    let keep = T::from_f64(1.0 / (1.0 - rate));
    Ok((0..numel)
        .map(|_| if rng.gen::<f64>() < rate { T::ZERO } else { keep })
        .collect())
}

/// Inverted dropout. With `training == false` the input is returned as is.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(input.clone());
    }
    let mask = dropout_mask::<T, R>(input.numel(), rate, rng)?;
    let data = input.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn same_shape<T: Real>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    same_shape("mse_loss", pred, target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = (p - t).to_f64();
            d * d
        })
        .sum();
    Ok(T::from_f64(sum / pred.numel() as f64))
}

pub(crate) fn mse_backward<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Tensor<T> {
    let scale = upstream * T::from_f64(2.0 / pred.numel() as f64);
    let data = pred.data().iter().zip(target.data()).map(|(&p, &t)| (p - t) * scale).collect();
    Tensor::new(pred.shape().to_vec(), data).unwrap()
}

const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities `pred` against 0/1 targets.
pub fn bce_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    same_shape("bce_loss", pred, target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.to_f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
            let t = t.to_f64();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(T::from_f64(sum / pred.numel() as f64))
}

pub(crate) fn bce_backward<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Tensor<T> {
    let m = pred.numel() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.to_f64();
            if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                // Clamped region is flat.
                return T::ZERO;
            }
            let t = t.to_f64();
            upstream * T::from_f64((p - t) / (p * (1.0 - p)) / m)
        })
        .collect();
    Tensor::new(pred.shape().to_vec(), data).unwrap()
}
