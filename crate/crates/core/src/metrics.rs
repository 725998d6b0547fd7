//! Evaluation metrics: thresholded or raw accuracy, MSE, the population
//! standard deviation of absolute errors, average absolute difference, and
//! SSIM (global or Gaussian-windowed).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Paired scalar targets `y` and predictions `y_hat`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarBatch {
    y: Vec<f64>,
    y_hat: Vec<f64>,
}

impl ScalarBatch {
    pub fn new(y: Vec<f64>, y_hat: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Usage("metric over an empty batch".into()));
        }
        if y.len() != y_hat.len() {
            return Err(Error::Shape(format!(
                "{} targets vs {} predictions",
                y.len(),
                y_hat.len()
            )));
        }
        if y.iter().chain(&y_hat).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in metric batch".into()));
        }
        Ok(ScalarBatch { y, y_hat })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn predictions(&self) -> &[f64] {
        &self.y_hat
    }

    fn abs_errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.y.iter().zip(&self.y_hat).map(|(y, p)| (p - y).abs())
    }

    fn require_unit_interval(&self) -> Result<()> {
        match self.y.iter().chain(&self.y_hat).find(|v| !(0.0..=1.0).contains(*v)) {
            None => Ok(()),
            Some(v) => Err(Error::Domain(format!("value {v} outside [0, 1]"))),
        }
    }
}

/// `100 − (Σ|ŷ − y| / m)·100`, after optionally snapping `ŷ` to {0, 1} at
/// `threshold` (values `>= threshold` become 1).
pub fn accuracy_pct(batch: &ScalarBatch, threshold: Option<f64>) -> Result<f64> {
    batch.require_unit_interval()?;
    let m = batch.len() as f64;
    // Scaling each term by 100 before summing keeps simple decimal cases exact.
    let pct_err: f64 = batch
        .y
        .iter()
        .zip(&batch.y_hat)
        .map(|(&y, &p)| {
            let p = match threshold {
                Some(t) if p >= t => 1.0,
                Some(_) => 0.0,
                None => p,
            };
            (p - y).abs() * 100.0
        })
        .sum();
    Ok(100.0 - pct_err / m)
}

/// `(1/m)·Σ(ŷ − y)²` over a scalar batch.
pub fn mse(batch: &ScalarBatch) -> f64 {
    let sq: f64 = batch.abs_errors().map(|e| e * e).sum();
    sq / batch.len() as f64
}

/// Population standard deviation of `|ŷ − y|`.
pub fn std_abs_err(batch: &ScalarBatch) -> f64 {
    // Welford update.
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for (k, e) in batch.abs_errors().enumerate() {
        let delta = e - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (e - mean);
    }
    (m2 / batch.len() as f64).max(0.0).sqrt()
}

/// Mean of `|ŷ − y|`, times 360 when `scale_to_degrees`.
pub fn aad(batch: &ScalarBatch, scale_to_degrees: bool) -> Result<f64> {
    batch.require_unit_interval()?;
    let scaled = batch.abs_errors().sum::<f64>() / batch.len() as f64;
    Ok(if scale_to_degrees { 360.0 * scaled } else { scaled })
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "image {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Pixel-wise MSE of one image pair, in the images' own units.
pub fn image_mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let sq: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sq / a.pixels().len() as f64)
}

/// Per-image MSE of paired image lists plus the batch mean.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMse {
    pub mean: f64,
    pub per_image: Vec<f64>,
}

pub fn image_batch_mse(y: &[Image], y_hat: &[Image]) -> Result<ImageMse> {
    if y.is_empty() {
        return Err(Error::Usage("metric over an empty batch".into()));
    }
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!("{} targets vs {} predictions", y.len(), y_hat.len())));
    }
    let per_image = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| image_mse(a, b))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_image.iter().sum::<f64>() / per_image.len() as f64;
    Ok(ImageMse { mean, per_image })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimWindow {
    /// One application of the formula over the whole channel.
    Global,
    /// Mean of the local SSIM map under a normalised Gaussian window.
    Gaussian { size: usize, sigma: f64 },
}

impl SsimWindow {
    pub const WANG: SsimWindow = SsimWindow::Gaussian {
        size: 11,
        sigma: 1.5,
    };
}

impl std::fmt::Display for SsimWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SsimWindow::Global => f.write_str("global"),
            SsimWindow::Gaussian { size, sigma } => write!(f, "gaussian ({size}x{size}, sigma {sigma})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub window: SsimWindow,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
            window: SsimWindow::Global,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c1() <= 0.0 || self.c2() <= 0.0 {
            return Err(Error::Parameter("SSIM constants must be positive".into()));
        }
        if let SsimWindow::Gaussian { size, sigma } = self.window {
            if size % 2 == 0 || !(sigma > 0.0) {
                return Err(Error::Parameter(format!(
                    "SSIM window size must be odd and sigma positive, got {size}, {sigma}"
                )));
            }
        }
        Ok(())
    }
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.pixels().iter().skip(c).step_by(3).map(|&v| v as f64).collect()
}

fn ssim_formula(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

fn global_ssim(a: &[f64], b: &[f64], c1: f64, c2: f64) -> f64 {
    let n = a.len() as f64;
    let mu_a = a.iter().sum::<f64>() / n;
    let mu_b = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mu_a, y - mu_b);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    ssim_formula(mu_a, mu_b, va / n, vb / n, cov / n, c1, c2)
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..n).map(|i| k[i] * x[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|i| k[i] * tmp[(r + i) * ow + c]).sum();
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn windowed_ssim(a: &[f64], b: &[f64], h: usize, w: usize, size: usize, sigma: f64, c1: f64, c2: f64) -> f64 {
    let k = gaussian_kernel(size, sigma);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let e_aa = filter_valid(&prod(a, a), h, w, &k);
    let e_bb = filter_valid(&prod(b, b), h, w, &k);
    let e_ab = filter_valid(&prod(a, b), h, w, &k);
    let n = mu_a.len();
    (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            ssim_formula(ma, mb, e_aa[i] - ma * ma, e_bb[i] - mb * mb, e_ab[i] - ma * mb, c1, c2)
        })
        .sum::<f64>()
        / n as f64
}

/// SSIM of two images, computed per channel and averaged over channels.
pub fn ssim(a: &Image, b: &Image, params: &SsimParams) -> Result<f64> {
    check_pair(a, b)?;
    params.validate()?;
    let (c1, c2) = (params.c1(), params.c2());
    let (h, w) = a.dims();
    let mut total = 0.0;
    for c in 0..3 {
        let (x, y) = (channel(a, c), channel(b, c));
        total += match params.window {
            SsimWindow::Global => global_ssim(&x, &y, c1, c2),
            SsimWindow::Gaussian { size, sigma } => {
                if size > h || size > w {
                    return Err(Error::Shape(format!(
                        "SSIM window {size} larger than {h}×{w} image"
                    )));
                }
                windowed_ssim(&x, &y, h, w, size, sigma, c1, c2)
            }
        };
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(y: &[f64], p: &[f64]) -> ScalarBatch {
        ScalarBatch::new(y.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy_pct(&batch(&[0., 1.], &[0., 1.]), None).unwrap(), 100.0);
        assert_eq!(accuracy_pct(&batch(&[0., 0.], &[1., 1.]), None).unwrap(), 0.0);
        assert_eq!(accuracy_pct(&batch(&[0., 1.], &[0.2, 0.6]), None).unwrap(), 70.0);
        assert_eq!(accuracy_pct(&batch(&[0., 1.], &[0.2, 0.6]), Some(0.5)).unwrap(), 100.0);
        assert!(matches!(
            accuracy_pct(&batch(&[0., 1.], &[1.2, 0.6]), None),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn batch_validation() {
        assert!(matches!(ScalarBatch::new(vec![], vec![]), Err(Error::Usage(_))));
        assert!(ScalarBatch::new(vec![1.0], vec![]).is_err());
    }

    #[test]
    fn std_cases() {
        assert_eq!(std_abs_err(&batch(&[0., 1., 2.], &[0.5, 1.5, 2.5])), 0.0);
        assert!((std_abs_err(&batch(&[0., 0.], &[0., 2.])) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn aad_scaling() {
        let b = batch(&[0.1, 0.5], &[0.162, 0.438]);
        let s = aad(&b, false).unwrap();
        assert_eq!(aad(&b, true).unwrap(), 360.0 * s);
        assert!((s - 0.062).abs() < 1e-12);
        assert_eq!(aad(&batch(&[0.3], &[0.3]), false).unwrap(), 0.0);
    }

    #[test]
    fn image_mse_constant() {
        let zero = Image::filled(4, 4, [0.0; 3]).unwrap();
        let two = Image::filled(4, 4, [2.0; 3]).unwrap();
        assert_eq!(image_mse(&zero, &two).unwrap(), 4.0);
        let r = image_batch_mse(&[zero.clone(), zero.clone()], &[zero.clone(), two]).unwrap();
        assert_eq!(r.per_image, vec![0.0, 4.0]);
        assert_eq!(r.mean, 2.0);
    }

    #[test]
    fn ssim_closed_form_black_white() {
        let black = Image::filled(8, 8, [0.0; 3]).unwrap();
        let white = Image::filled(8, 8, [255.0; 3]).unwrap();
        let p = SsimParams::default();
        let c1 = p.c1();
        assert!((c1 - 6.5025).abs() < 1e-12);
        let got = ssim(&black, &white, &p).unwrap();
        assert!((got - c1 / (255.0f64.powi(2) + c1)).abs() < 1e-12);
        assert!((got - 1.0e-4).abs() < 1e-6);
    }

    #[test]
    fn ssim_window_validation() {
        let a = Image::filled(8, 8, [10.0; 3]).unwrap();
        let p = SsimParams {
            window: SsimWindow::WANG,
            ..Default::default()
        };
        assert!(matches!(ssim(&a, &a, &p), Err(Error::Shape(_))));
        let even = SsimParams {
            window: SsimWindow::Gaussian { size: 4, sigma: 1.5 },
            ..Default::default()
        };
        assert!(ssim(&a, &a, &even).is_err());
    }
}
