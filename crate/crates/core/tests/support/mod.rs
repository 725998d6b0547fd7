//! Brute-force references and fixtures shared by the integration tests.
//! Each reference is written from the textbook definition with plain loops
//! and shares no code with the library.

#![allow(dead_code)]

pub mod grad;

use rand::Rng;
use sspb_core::imaging::Image;
use sspb_core::ops::Padding;
use sspb_core::rng::rng_from;
use sspb_core::Tensor;

pub fn rand_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rand_vec(rng, n, -1.0, 1.0)).unwrap()
}

/// Image with arbitrary (not necessarily integral) pixel values in [0, 255].
pub fn rand_image(rng: &mut impl Rng, h: usize, w: usize) -> Image {
    let px = (0..h * w * 3).map(|_| rng.gen_range(0.0f32..255.0)).collect();
    Image::rgb(h, w, px).unwrap()
}

/// Image with integer pixel values, as decoded from a PNG.
pub fn rand_u8_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = rng_from(seed);
    let px = (0..h * w * 3).map(|_| rng.gen_range(0u8..=255) as f32).collect();
    Image::rgb(h, w, px).unwrap()
}

/// `out[n][i][j][f] = b[f] + Σ x[n][i·s + p − pad_t][j·s + q − pad_l][c] · k[p][q][c][f]`
/// over in-bounds taps; "same" pads `max((o − 1)·s + k − h, 0)` in total with
/// the smaller half on top/left.
pub fn conv2d_ref(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, stride: usize, padding: Padding) -> Tensor<f64> {
    let [n, h, w, c] = x.shape().try_into().unwrap();
    let [kh, kw, kc, f] = k.shape().try_into().unwrap();
    assert_eq!(c, kc);
    let (ho, wo, pt, pl) = match padding {
        Padding::Valid => ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0),
        Padding::Same => {
            let ho = h.div_ceil(stride);
            let wo = w.div_ceil(stride);
            let ph = ((ho - 1) * stride + kh).saturating_sub(h);
            let pw = ((wo - 1) * stride + kw).saturating_sub(w);
            (ho, wo, ph / 2, pw / 2)
        }
    };
    let xd = x.data();
    let kd = k.data();
    let mut out = vec![0.0; n * ho * wo * f];
    for bn in 0..n {
        for i in 0..ho {
            for j in 0..wo {
                for ff in 0..f {
                    let mut acc = b.data()[ff];
                    for p in 0..kh {
                        for q in 0..kw {
                            let r = (i * stride + p) as isize - pt as isize;
                            let s = (j * stride + q) as isize - pl as isize;
                            if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
                                continue;
                            }
                            for cc in 0..c {
                                let xv = xd[((bn * h + r as usize) * w + s as usize) * c + cc];
                                acc += xv * kd[((p * kw + q) * c + cc) * f + ff];
                            }
                        }
                    }
                    out[((bn * ho + i) * wo + j) * f + ff] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, ho, wo, f], out).unwrap()
}

pub fn dense_ref(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let [n, din] = x.shape().try_into().unwrap();
    let dout = w.shape()[1];
    let mut out = vec![0.0; n * dout];
    for r in 0..n {
        for o in 0..dout {
            out[r * dout + o] = b.data()[o] + (0..din).map(|i| x.data()[r * din + i] * w.data()[i * dout + o]).sum::<f64>();
        }
    }
    Tensor::new(vec![n, dout], out).unwrap()
}

pub fn gap_ref(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, h, w, c] = x.shape().try_into().unwrap();
    let mut out = vec![0.0; n * c];
    for bn in 0..n {
        for cc in 0..c {
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..w {
                    s += x.data()[((bn * h + i) * w + j) * c + cc];
                }
            }
            out[bn * c + cc] = s / (h * w) as f64;
        }
    }
    Tensor::new(vec![n, c], out).unwrap()
}

pub fn mse_ref(y: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += (p[i] - y[i]) * (p[i] - y[i]);
    }
    s / y.len() as f64
}

/// Two-pass population standard deviation of `|ŷ − y|`.
pub fn std_abs_err_ref(y: &[f64], p: &[f64]) -> f64 {
    let e: Vec<f64> = y.iter().zip(p).map(|(a, b)| (b - a).abs()).collect();
    let m = e.iter().sum::<f64>() / e.len() as f64;
    (e.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / e.len() as f64).sqrt()
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    let (h, w) = img.dims();
    let mut v = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            v.push(img.pixel(r, col)[c] as f64);
        }
    }
    v
}

fn ssim_stat(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Channel-averaged SSIM with one window covering the whole image.
pub fn ssim_global_ref(a: &Image, b: &Image, k1: f64, k2: f64, range: f64) -> f64 {
    let (c1, c2) = ((k1 * range).powi(2), (k2 * range).powi(2));
    let mut total = 0.0;
    for c in 0..3 {
        let (x, y) = (plane(a, c), plane(b, c));
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let cxy = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
        total += ssim_stat(mx, my, vx, vy, cxy, c1, c2);
    }
    total / 3.0
}

/// Channel-averaged mean SSIM over every fully contained `size × size`
/// window, weighted by a normalised 2-D Gaussian.
pub fn ssim_gaussian_ref(a: &Image, b: &Image, size: usize, sigma: f64, k1: f64, k2: f64, range: f64) -> f64 {
    let (c1, c2) = ((k1 * range).powi(2), (k2 * range).powi(2));
    let (h, w) = a.dims();
    let half = (size / 2) as f64;
    let mut g = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let d2 = (i as f64 - half).powi(2) + (j as f64 - half).powi(2);
            g[i * size + j] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let gs: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= gs);
    let mut total = 0.0;
    for c in 0..3 {
        let (x, y) = (plane(a, c), plane(b, c));
        let mut acc = 0.0;
        let mut count = 0;
        for r0 in 0..=h - size {
            for c0 in 0..=w - size {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..size {
                    for j in 0..size {
                        let k = (r0 + i) * w + c0 + j;
                        mx += g[i * size + j] * x[k];
                        my += g[i * size + j] * y[k];
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..size {
                    for j in 0..size {
                        let k = (r0 + i) * w + c0 + j;
                        let gw = g[i * size + j];
                        vx += gw * (x[k] - mx).powi(2);
                        vy += gw * (y[k] - my).powi(2);
                        cxy += gw * (x[k] - mx) * (y[k] - my);
                    }
                }
                acc += ssim_stat(mx, my, vx, vy, cxy, c1, c2);
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / 3.0
}

/// Whether training should stop after seeing `losses`: the last `p` epochs
/// each failed to strictly improve on the minimum of all epochs before them.
pub fn should_stop_ref(losses: &[f64], p: usize) -> bool {
    let n = losses.len();
    if n < p + 1 {
        return false;
    }
    (n - p..n).all(|j| {
        let best_before = losses[..j].iter().cloned().fold(f64::INFINITY, f64::min);
        losses[j] >= best_before
    })
}

/// 1-based epoch at which a run with patience `p` halts, or `None` if it
/// consumes the whole sequence.
pub fn stop_epoch_ref(losses: &[f64], p: usize) -> Option<usize> {
    (1..=losses.len()).find(|&e| should_stop_ref(&losses[..e], p))
}

/// Exact 90° counter-clockwise rotation of a square image:
/// `out[r][c] = in[c][n − 1 − r]`.
pub fn rot90_ref(img: &Image) -> Image {
    let n = img.height();
    Image::from_fn(n, n, |r, c| img.pixel(c, n - 1 - r)).unwrap()
}

/// Sorted multiset of RGB triples, compared by bit pattern.
pub fn pixel_multiset(img: &Image) -> Vec<[u32; 3]> {
    let mut v: Vec<[u32; 3]> = img.pixels().chunks(3).map(|p| [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]).collect();
    v.sort_unstable();
    v
}

/// Logistic regression on pooled channel means (`GAP → dense(3, 1) → sigmoid`)
/// trained by full-batch gradient descent on cross-entropy. Returns test
/// accuracy in percent.
pub fn pooled_logistic_probe(train: &[(Image, u8)], test: &[(Image, u8)], epochs: usize, lr: f64) -> f64 {
    let feats = |img: &Image| -> [f64; 3] {
        let mut s = [0.0; 3];
        for p in img.pixels().chunks(3) {
            for c in 0..3 {
                s[c] += p[c] as f64;
            }
        }
        let n = (img.height() * img.width()) as f64;
        s.map(|v| v / n)
    };
    let xtr: Vec<[f64; 3]> = train.iter().map(|(i, _)| feats(i)).collect();
    // Standardise with training statistics so the step size is meaningful.
    let mut mean = [0.0; 3];
    let mut sd = [0.0; 3];
    for c in 0..3 {
        mean[c] = xtr.iter().map(|x| x[c]).sum::<f64>() / xtr.len() as f64;
        sd[c] = (xtr.iter().map(|x| (x[c] - mean[c]).powi(2)).sum::<f64>() / xtr.len() as f64).sqrt().max(1e-9);
    }
    let z = |x: [f64; 3]| [0, 1, 2].map(|c| (x[c] - mean[c]) / sd[c]);
    let xtr: Vec<[f64; 3]> = xtr.into_iter().map(z).collect();
    let (mut w, mut b) = ([0.0; 3], 0.0);
    let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
    for _ in 0..epochs {
        let (mut gw, mut gb) = ([0.0; 3], 0.0);
        for (x, (_, y)) in xtr.iter().zip(train) {
            let p = sig(b + (0..3).map(|c| w[c] * x[c]).sum::<f64>());
            let e = p - *y as f64;
            for c in 0..3 {
                gw[c] += e * x[c];
            }
            gb += e;
        }
        let m = train.len() as f64;
        for c in 0..3 {
            w[c] -= lr * gw[c] / m;
        }
        b -= lr * gb / m;
    }
    let correct = test
        .iter()
        .filter(|(img, y)| {
            let x = z(feats(img));
            let p = sig(b + (0..3).map(|c| w[c] * x[c]).sum::<f64>());
            u8::from(p >= 0.5) == *y
        })
        .count();
    100.0 * correct as f64 / test.len() as f64
}
