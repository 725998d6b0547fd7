//! RGB images, the three pretext corruptions, and network preprocessing.

use std::path::Path;

use image::ImageEncoder;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// `height × width × 3` raster of `f32` pixels, row-major HWC.
///
/// RGB-tagged images are canonical (values in `[0, 255]`); BGR-tagged ones
/// are preprocessed network inputs and may hold any finite value.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    order: ChannelOrder,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, pixels: Vec<f32>, order: ChannelOrder) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("image extents must be positive, got {height}×{width}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{height}×{width}×3 image needs {} values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite pixel at flat index {i}")));
        }
        if order == ChannelOrder::Rgb {
            if let Some(i) = pixels.iter().position(|v| !(0.0..=255.0).contains(v)) {
                return Err(Error::Parameter(format!(
                    "canonical RGB pixel out of [0, 255] at flat index {i}: {}",
                    pixels[i]
                )));
            }
        }
        Ok(Image {
            height,
            width,
            pixels,
            order,
        })
    }

    pub fn rgb(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        Self::new(height, width, pixels, ChannelOrder::Rgb)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::rgb(height, width, pixels)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                pixels.extend_from_slice(&f(r, c));
            }
        }
        Self::rgb(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn order(&self) -> ChannelOrder {
        self.order
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set_pixel(&mut self, row: usize, col: usize, v: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&v);
    }

    /// Count of pixels whose value differs in any channel.
    pub fn count_differing_pixels(&self, other: &Image) -> usize {
        self.pixels
            .chunks(3)
            .zip(other.pixels.chunks(3))
            .filter(|(a, b)| a != b)
            .count()
    }

    /// `H×W×3` tensor view (copy).
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![self.height, self.width, 3], self.pixels.clone()).unwrap()
    }

    pub fn from_tensor(t: &Tensor<f32>, order: ChannelOrder) -> Result<Self> {
        let [h, w, 3] = *t.shape() else {
            return Err(Error::Shape(format!("expected H×W×3 tensor, got {:?}", t.shape())));
        };
        Self::new(h, w, t.data().to_vec(), order)
    }

    /// Reads an 8-bit PNG; any colour type is converted to RGB.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::rgb(h as usize, w as usize, rgb.into_raw().into_iter().map(f32::from).collect())
    }

    /// Writes an 8-bit RGB PNG, rounding and clamping to `[0, 255]`.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.order != ChannelOrder::Rgb {
            return Err(Error::Usage("write_png needs a canonical RGB image; deprocess first".into()));
        }
        let bytes = self.to_rgb8();
        let mut buf = Vec::new();
        image::codecs::png::PngEncoder::new(&mut buf)
            .write_image(&bytes, self.width as u32, self.height as u32, image::ExtendedColorType::Rgb8)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

fn require_rgb(img: &Image, what: &str) -> Result<()> {
    if img.order != ChannelOrder::Rgb {
        return Err(Error::Usage(format!("{what} expects a canonical RGB image")));
    }
    Ok(())
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Rotates counter-clockwise (as displayed, rows growing downward) about the
/// image centre by `angle_deg` degrees.
///
/// Each output pixel is inverse-mapped through the rotation matrix and
/// bilinearly sampled; source positions outside the image give black.
pub fn rotate_image(img: &Image, angle_deg: f64) -> Result<Image> {
    require_rgb(img, "rotate_image")?;
    if !(0.0..360.0).contains(&angle_deg) {
        return Err(Error::Parameter(format!("rotation angle must be in [0, 360), got {angle_deg}")));
    }
    if angle_deg == 0.0 {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    let mut out = vec![0.0f32; h * w * 3];
    for r in 0..h {
        let dy = r as f64 - cy;
        for c in 0..w {
            let dx = c as f64 - cx;
            let sx = snap(cx + cos * dx - sin * dy);
            let sy = snap(cy + sin * dx + cos * dy);
            if !(0.0..=max_x).contains(&sx) || !(0.0..=max_y).contains(&sy) {
                continue;
            }
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let (p00, p01, p10, p11) = (img.pixel(y0, x0), img.pixel(y0, x1), img.pixel(y1, x0), img.pixel(y1, x1));
            let o = &mut out[(r * w + c) * 3..(r * w + c) * 3 + 3];
            for ch in 0..3 {
                let top = p00[ch] as f64 * (1.0 - fx) + p01[ch] as f64 * fx;
                let bot = p10[ch] as f64 * (1.0 - fx) + p11[ch] as f64 * fx;
                o[ch] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 255.0) as f32;
            }
        }
    }
    Image::rgb(h, w, out)
}

/// Black `side × side` square with its top-left corner at `(row, col)`.
pub fn mask_patch(img: &Image, top_left: (usize, usize), side: usize) -> Result<Image> {
    let (row, col) = top_left;
    if side == 0 || row + side > img.height || col + side > img.width {
        return Err(Error::Parameter(format!(
            "patch at ({row}, {col}) with side {side} does not fit a {}×{} image",
            img.height, img.width
        )));
    }
    let mut out = img.clone();
    for r in row..row + side {
        let s = (r * img.width + col) * 3;
        out.pixels[s..s + side * 3].fill(0.0);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Swap {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub side: usize,
}

impl Swap {
    fn overlaps(a: (usize, usize), b: (usize, usize), side: usize) -> bool {
        a.0 < b.0 + side && b.0 < a.0 + side && a.1 < b.1 + side && b.1 < a.1 + side
    }
}

/// The swaps applied by [`corrupt_swap`], in application order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapRecord {
    pub height: usize,
    pub width: usize,
    pub swaps: Vec<Swap>,
}

/// Exchanges two disjoint square blocks in place.
pub fn swap_patches(img: &mut Image, swap: &Swap) -> Result<()> {
    let Swap { a, b, side } = *swap;
    let fits = |p: (usize, usize)| p.0 + side <= img.height && p.1 + side <= img.width;
    if side == 0 || !fits(a) || !fits(b) {
        return Err(Error::Parameter(format!("swap {swap:?} does not fit a {}×{} image", img.height, img.width)));
    }
    if Swap::overlaps(a, b, side) {
        return Err(Error::Parameter(format!("swap {swap:?} has overlapping patches")));
    }
    for dr in 0..side {
        for dc in 0..side {
            let pa = img.pixel(a.0 + dr, a.1 + dc);
            let pb = img.pixel(b.0 + dr, b.1 + dc);
            img.set_pixel(a.0 + dr, a.1 + dc, pb);
            img.set_pixel(b.0 + dr, b.1 + dc, pa);
        }
    }
    Ok(())
}

const MAX_SWAP_ATTEMPTS: usize = 1000;

/// Applies `n_swaps` swaps of two uniformly placed, non-overlapping
/// `patch_side` squares. Both positions are redrawn on overlap.
pub fn corrupt_swap<R: Rng + ?Sized>(
    img: &Image,
    n_swaps: usize,
    patch_side: usize,
    rng: &mut R,
) -> Result<(Image, SwapRecord)> {
    let (h, w) = img.dims();
    if patch_side == 0 || 2 * patch_side > h.min(w) {
        return Err(Error::Parameter(format!(
            "swap patch side {patch_side} must be in [1, min(H, W)/2] for a {h}×{w} image"
        )));
    }
    let mut out = img.clone();
    let mut record = SwapRecord {
        height: h,
        width: w,
        swaps: Vec::with_capacity(n_swaps),
    };
    let pick = |rng: &mut R| (rng.gen_range(0..=h - patch_side), rng.gen_range(0..=w - patch_side));
    for _ in 0..n_swaps {
        let (mut a, mut b) = (pick(rng), pick(rng));
        let mut attempts = 1;
        while Swap::overlaps(a, b, patch_side) {
            if attempts == MAX_SWAP_ATTEMPTS {
                return Err(Error::Parameter(format!(
                    "no disjoint patch pair found after {MAX_SWAP_ATTEMPTS} attempts"
                )));
            }
            (a, b) = (pick(rng), pick(rng));
            attempts += 1;
        }
        let swap = Swap { a, b, side: patch_side };
        swap_patches(&mut out, &swap)?;
        record.swaps.push(swap);
    }
    Ok((out, record))
}

/// Undoes a [`SwapRecord`] by replaying its swaps in reverse.
pub fn uncorrupt(img: &Image, record: &SwapRecord) -> Result<Image> {
    if record.swaps.is_empty() {
        return Ok(img.clone());
    }
    if img.dims() != (record.height, record.width) {
        return Err(Error::Parameter(format!(
            "record made on {}×{} image, got {}×{}",
            record.height, record.width, img.height, img.width
        )));
    }
    let mut out = img.clone();
    for swap in record.swaps.iter().rev() {
        swap_patches(&mut out, swap)?;
    }
    Ok(out)
}

/// Per-channel means subtracted after the RGB→BGR flip, in B, G, R order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessParams {
    pub means_bgr: [f32; 3],
}

impl PreprocessParams {
    pub const IMAGENET_BGR: [f32; 3] = [103.939, 116.779, 123.68];

    pub fn zero() -> Self {
        PreprocessParams { means_bgr: [0.0; 3] }
    }

    /// Means of a set of canonical images, converted to B, G, R order.
    pub fn from_images(images: &[Image]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Usage("dataset means of zero images".into()));
        }
        let mut sum = [0.0f64; 3];
        let mut count = 0usize;
        for img in images {
            require_rgb(img, "dataset means")?;
            for px in img.pixels.chunks(3) {
                for c in 0..3 {
                    sum[c] += px[c] as f64;
                }
            }
            count += img.height * img.width;
        }
        let m = |c: usize| (sum[c] / count as f64) as f32;
        Ok(PreprocessParams {
            means_bgr: [m(2), m(1), m(0)],
        })
    }
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            means_bgr: Self::IMAGENET_BGR,
        }
    }
}

/// RGB→BGR flip without mean subtraction.
pub fn flip_channels(img: &Image) -> Image {
    let mut out = img.clone();
    for px in out.pixels.chunks_mut(3) {
        px.swap(0, 2);
    }
    out.order = match img.order {
        ChannelOrder::Rgb => ChannelOrder::Bgr,
        ChannelOrder::Bgr => ChannelOrder::Rgb,
    };
    out
}

/// Flips RGB→BGR, then zero-centres each channel.
pub fn preprocess(img: &Image, params: &PreprocessParams) -> Result<Image> {
    if img.order == ChannelOrder::Bgr {
        return Err(Error::Usage("image is already preprocessed (BGR-tagged)".into()));
    }
    let mut out = flip_channels(img);
    for px in out.pixels.chunks_mut(3) {
        for c in 0..3 {
            px[c] -= params.means_bgr[c];
        }
    }
    Ok(out)
}

/// Inverse of [`preprocess`]. Clamping to `[0, 255]` only happens when
/// `clamp` is set; unclamped out-of-range results are a numeric error since
/// they cannot be canonical.
pub fn deprocess(img: &Image, params: &PreprocessParams, clamp: bool) -> Result<Image> {
    if img.order != ChannelOrder::Bgr {
        return Err(Error::Usage("deprocess expects a BGR-tagged image".into()));
    }
    let mut pixels = img.pixels.clone();
    for px in pixels.chunks_mut(3) {
        for c in 0..3 {
            px[c] += params.means_bgr[c];
        }
        px.swap(0, 2);
        if clamp {
            for v in px.iter_mut() {
                *v = v.clamp(0.0, 255.0);
            }
        }
    }
    Image::rgb(img.height, img.width, pixels)
}
