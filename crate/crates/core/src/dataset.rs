//! Labelled image sets: a CSV manifest loader for real folders and a seeded
//! generator of synthetic lesion-like images.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::rng::{rng_from, split};

pub const MANIFEST_HEADER: [&str; 2] = ["filepath", "label"];

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub image: Image,
    /// 0 = benign, 1 = melanoma.
    pub label: u8,
    /// Resolved file path, unique per source image.
    pub source_id: String,
}

fn parse_label(s: &str) -> Option<u8> {
    match s.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

/// Reads a `filepath,label` CSV. Paths are relative to the manifest's
/// directory; rows are numbered from 1 after the header.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_slice());
    let header = reader
        .headers()
        .map_err(|e| Error::Ingestion { row: 0, message: e.to_string() })?
        .clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(Error::Ingestion {
            row: 0,
            message: format!("expected header 'filepath,label', got '{}'", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Ingestion { row, message: e.to_string() })?;
        let (file, label) = (rec.get(0).unwrap_or("").trim(), rec.get(1).unwrap_or(""));
        let label = parse_label(label).ok_or_else(|| Error::Ingestion {
            row,
            message: format!("label must be 0 or 1, got '{label}'"),
        })?;
        let resolved = base.join(file);
        let image = Image::read_png(&resolved).map_err(|e| Error::Ingestion { row, message: e.to_string() })?;
        out.push(LabeledExample {
            image,
            label,
            source_id: resolved.display().to_string(),
        });
    }
    if out.is_empty() {
        return Err(Error::Usage(format!("manifest {} lists no images", path.display())));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, rows: &[(String, u8)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(MANIFEST_HEADER).map_err(fmt)?;
    for (file, label) in rows {
        w.write_record([file.as_str(), &label.to_string()]).map_err(fmt)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub side: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of class-1 images.
    #[serde(default = "default_balance")]
    pub balance: f64,
}

fn default_balance() -> f64 {
    0.5
}

impl SynthConfig {
    pub fn new(n: usize, side: usize, seed: u64) -> Self {
        SynthConfig {
            n,
            side,
            seed,
            balance: default_balance(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("synthetic set needs n >= 2, got {}", self.n)));
        }
        if self.side < 16 {
            return Err(Error::Config(format!("synthetic side must be >= 16, got {}", self.side)));
        }
        if !(0.0..=1.0).contains(&self.balance) {
            return Err(Error::Config(format!("balance must be in [0, 1], got {}", self.balance)));
        }
        Ok(())
    }

    pub fn positives(&self) -> usize {
        (self.n as f64 * self.balance).round() as usize
    }
}

/// Labels in generation order: exactly `positives()` ones, seeded shuffle.
fn labels(cfg: &SynthConfig) -> Vec<u8> {
    let k = cfg.positives();
    let mut l: Vec<u8> = (0..cfg.n).map(|i| u8::from(i < k)).collect();
    l.shuffle(&mut rng_from(split(cfg.seed, u64::MAX)));
    l
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// One synthetic image with integer pixel values, so it survives a PNG
/// round-trip unchanged.
pub fn synth_image(side: usize, label: u8, seed: u64) -> Image {
    let mut rng = rng_from(seed);
    let s = side as f64;
    let tone = rng.gen_range(0.85..1.1);
    let skin = [215.0 * tone, 170.0 * tone, 145.0 * tone];
    let shade = rng.gen_range(0.6..1.0);
    let lesion = [110.0 * shade, 72.0 * shade, 52.0 * shade];
    let second = [70.0 * shade, 80.0 * shade, 125.0 * shade];

    let c = (s - 1.0) / 2.0;
    let cy = c + rng.gen_range(-0.08..0.08) * s;
    let cx = c + rng.gen_range(-0.08..0.08) * s;
    let ra = rng.gen_range(0.18..0.3) * s;
    let rb = rng.gen_range(0.18..0.3) * s;
    let theta = rng.gen_range(0.0..PI);
    let (amp, lobes, phase) = if label == 1 {
        (rng.gen_range(0.15..0.3), rng.gen_range(5..=9) as f64, rng.gen_range(0.0..2.0 * PI))
    } else {
        (0.0, 0.0, 0.0)
    };
    // Second colour region: a smaller ellipse fully inside the lesion.
    let off = rng.gen_range(0.0..2.0 * PI);
    let (sy, sx) = (cy + 0.25 * rb * off.sin(), cx + 0.25 * ra * off.cos());
    let sr = 0.5 * ra.min(rb);

    let noise: Vec<f64> = (0..side * side * 3).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let (sin_t, cos_t) = theta.sin_cos();
    let img = Image::from_fn(side, side, |r, col| {
        let (dy, dx) = (r as f64 - cy, col as f64 - cx);
        let u = (cos_t * dx + sin_t * dy) / ra;
        let v = (-sin_t * dx + cos_t * dy) / rb;
        let rho = (u * u + v * v).sqrt();
        let phi = v.atan2(u);
        let boundary = 1.0 + amp * (lobes * phi + phase).sin();
        // Soft edge roughly one pixel wide.
        let width = 1.0 / ra.min(rb);
        let inside = 1.0 - smoothstep(boundary - width, boundary + width, rho);
        let mut px = lerp3(skin, lesion, inside);
        if label == 1 {
            let d = ((r as f64 - sy).powi(2) + (col as f64 - sx).powi(2)).sqrt();
            let t = inside * (1.0 - smoothstep(sr - 1.0, sr + 1.0, d));
            px = lerp3(px, second, t);
        }
        let k = (r * side + col) * 3;
        [0, 1, 2].map(|ch| (px[ch] + noise[k + ch]).round().clamp(0.0, 255.0) as f32)
    });
    img.expect("synthetic pixels are finite and in range")
}

/// Generates the set in memory. Source ids are `synth:<seed>:<index>`.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<LabeledExample>> {
    cfg.validate()?;
    let labels = labels(cfg);
    Ok(labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| LabeledExample {
            image: synth_image(cfg.side, label, split(cfg.seed, i as u64)),
            label,
            source_id: format!("synth:{}:{i}", cfg.seed),
        })
        .collect())
}

pub fn synth_file_name(label: u8, index: usize) -> String {
    format!("{label}_{index:05}.png")
}

/// Writes `<label>_<index>.png` files and `manifest.csv` into `out_dir` and
/// returns the examples with their resolved paths as source ids.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<LabeledExample>> {
    let mut examples = synthesize(cfg)?;
    crate::io::create_dir(out_dir)?;
    let names: Vec<String> = examples
        .iter()
        .enumerate()
        .map(|(i, e)| synth_file_name(e.label, i))
        .collect();
    examples
        .par_iter_mut()
        .zip(names.par_iter())
        .try_for_each(|(e, name)| -> Result<()> {
            let p: PathBuf = out_dir.join(name);
            e.image.write_png(&p)?;
            e.source_id = p.display().to_string();
            Ok(())
        })?;
    let rows: Vec<(String, u8)> = names.into_iter().zip(examples.iter().map(|e| e.label)).collect();
    write_manifest(&out_dir.join("manifest.csv"), &rows)?;
    Ok(examples)
}
