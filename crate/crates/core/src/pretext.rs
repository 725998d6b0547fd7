//! Supervised pairs for the three pretext tasks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, Image};
use crate::rng::{self, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PretextTask {
    #[serde(rename = "rotation")]
    Rotation,
    #[serde(rename = "inpaint", alias = "missing_patch")]
    Inpaint,
    #[serde(rename = "corrupt", alias = "corruption")]
    Corrupt,
}

impl PretextTask {
    pub const ALL: [PretextTask; 3] = [PretextTask::Rotation, PretextTask::Inpaint, PretextTask::Corrupt];

    pub fn as_str(&self) -> &'static str {
        match self {
            PretextTask::Rotation => "rotation",
            PretextTask::Inpaint => "inpaint",
            PretextTask::Corrupt => "corrupt",
        }
    }

    pub fn predicts_image(&self) -> bool {
        !matches!(self, PretextTask::Rotation)
    }
}

impl fmt::Display for PretextTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PretextTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(PretextTask::Rotation),
            "inpaint" | "missing_patch" => Ok(PretextTask::Inpaint),
            "corrupt" | "corruption" => Ok(PretextTask::Corrupt),
            other => Err(Error::Usage(format!(
                "unknown task '{other}' (expected rotation, inpaint or corrupt)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Rotation angle as a fraction of a full turn, in `[0, 1)`.
    Label(f32),
    Image(Image),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretextExample {
    pub input: Image,
    pub target: Target,
    pub task: PretextTask,
    /// Seed of the generator that produced this example.
    pub seed: u64,
}

/// Reference side the absolute patch sizes below were chosen for.
pub const REFERENCE_SIDE: f64 = 224.0;
pub const REFERENCE_MASK_SIDE: f64 = 75.0;
pub const REFERENCE_SWAP_PATCH: f64 = 30.0;
pub const DEFAULT_SWAP_COUNT: usize = 100;

/// Patch geometry for the image tasks. `None` sizes scale with the image
/// side so that a 224-pixel image gets a 75-pixel mask and 30-pixel swaps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretextConfig {
    #[serde(default)]
    pub mask_side: Option<usize>,
    #[serde(default = "default_swap_count")]
    pub swap_count: usize,
    #[serde(default)]
    pub swap_patch: Option<usize>,
}

fn default_swap_count() -> usize {
    DEFAULT_SWAP_COUNT
}

impl Default for PretextConfig {
    fn default() -> Self {
        PretextConfig {
            mask_side: None,
            swap_count: DEFAULT_SWAP_COUNT,
            swap_patch: None,
        }
    }
}

/// Absolute patch sizes for a given image side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedPretextConfig {
    pub mask_side: usize,
    pub swap_count: usize,
    pub swap_patch: usize,
}

fn scaled(side: usize, reference: f64) -> usize {
    ((side as f64 * reference / REFERENCE_SIDE).round() as usize).max(1)
}

impl PretextConfig {
    pub fn resolve(&self, image_side: usize) -> ResolvedPretextConfig {
        ResolvedPretextConfig {
            mask_side: self.mask_side.unwrap_or_else(|| scaled(image_side, REFERENCE_MASK_SIDE)),
            swap_count: self.swap_count,
            swap_patch: self.swap_patch.unwrap_or_else(|| scaled(image_side, REFERENCE_SWAP_PATCH)),
        }
    }
}

/// Fraction of a turn for `angle_deg ∈ [0, 360)`, kept strictly below 1.
fn angle_label(angle_deg: f64) -> f32 {
    let label = (angle_deg / 360.0) as f32;
    if label >= 1.0 {
        1.0f32.next_down()
    } else {
        label
    }
}

/// Rotation example with a caller-chosen angle.
pub fn rotation_example_at(img: &Image, angle_deg: f64, seed: u64) -> Result<PretextExample> {
    Ok(PretextExample {
        input: imaging::rotate_image(img, angle_deg)?,
        target: Target::Label(angle_label(angle_deg)),
        task: PretextTask::Rotation,
        seed,
    })
}

/// Angle ~ Uniform[0, 360); target = angle / 360.
pub fn gen_rotation_example<R: Rng + ?Sized>(img: &Image, rng: &mut R) -> Result<PretextExample> {
    let angle = rng.gen_range(0.0..360.0);
    rotation_example_at(img, angle, 0)
}

/// Black square at a uniformly chosen position where it fits.
pub fn gen_missing_patch_example<R: Rng + ?Sized>(
    img: &Image,
    rng: &mut R,
    mask_side: usize,
) -> Result<PretextExample> {
    let (h, w) = img.dims();
    if mask_side == 0 || mask_side > h.min(w) {
        return Err(Error::Parameter(format!(
            "mask side {mask_side} must be in [1, {}] for a {h}×{w} image",
            h.min(w)
        )));
    }
    let row = rng.gen_range(0..=h - mask_side);
    let col = rng.gen_range(0..=w - mask_side);
    Ok(PretextExample {
        input: imaging::mask_patch(img, (row, col), mask_side)?,
        target: Target::Image(img.clone()),
        task: PretextTask::Inpaint,
        seed: 0,
    })
}

pub fn gen_corruption_example<R: Rng + ?Sized>(
    img: &Image,
    rng: &mut R,
    n_swaps: usize,
    patch_side: usize,
) -> Result<PretextExample> {
    let (corrupted, _) = imaging::corrupt_swap(img, n_swaps, patch_side, rng)?;
    Ok(PretextExample {
        input: corrupted,
        target: Target::Image(img.clone()),
        task: PretextTask::Corrupt,
        seed: 0,
    })
}

/// One example for `img` drawn from a generator seeded with `seed`.
pub fn gen_example(img: &Image, task: PretextTask, cfg: &ResolvedPretextConfig, seed: u64) -> Result<PretextExample> {
    let mut rng = rng_from(seed);
    let mut ex = match task {
        PretextTask::Rotation => gen_rotation_example(img, &mut rng)?,
        PretextTask::Inpaint => gen_missing_patch_example(img, &mut rng, cfg.mask_side)?,
        PretextTask::Corrupt => gen_corruption_example(img, &mut rng, cfg.swap_count, cfg.swap_patch)?,
    };
    ex.seed = seed;
    Ok(ex)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretextDataset {
    pub task: PretextTask,
    pub config: ResolvedPretextConfig,
    pub seed: u64,
    pub examples: Vec<PretextExample>,
}

/// Seed of example `index` in a dataset generated with `seed`.
pub fn example_seed(seed: u64, index: usize) -> u64 {
    rng::split(seed, index as u64)
}

/// One example per source image; example `i` uses its own generator seeded
/// from `(seed, i)`.
pub fn build_pretext_dataset(
    images: &[Image],
    task: PretextTask,
    config: &ResolvedPretextConfig,
    seed: u64,
) -> Result<PretextDataset> {
    if images.is_empty() {
        return Err(Error::Usage("pretext dataset from zero images".into()));
    }
    let examples = images
        .iter()
        .enumerate()
        .map(|(i, img)| gen_example(img, task, config, example_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PretextDataset {
        task,
        config: *config,
        seed,
        examples,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PretextManifestRow {
    pub input_path: String,
    pub target: String,
    pub task: String,
    pub seed: u64,
}

/// Writes `inputs/NNNNN.png`, `targets/NNNNN.png` (image tasks) and
/// `manifest.csv` with header `input_path,target,task,seed`. Paths in the
/// manifest are relative to `out_dir`.
pub fn write_pretext_dataset(ds: &PretextDataset, out_dir: &Path) -> Result<()> {
    crate::io::create_dir(&out_dir.join("inputs"))?;
    if ds.task.predicts_image() {
        crate::io::create_dir(&out_dir.join("targets"))?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, ex) in ds.examples.iter().enumerate() {
        let input_path = format!("inputs/{i:05}.png");
        ex.input.write_png(out_dir.join(&input_path))?;
        let target = match &ex.target {
            Target::Label(v) => format!("{v}"),
            Target::Image(img) => {
                let p = format!("targets/{i:05}.png");
                img.write_png(out_dir.join(&p))?;
                p
            }
        };
        w.serialize(PretextManifestRow {
            input_path,
            target,
            task: ds.task.to_string(),
            seed: ex.seed,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    crate::io::write_atomic(&out_dir.join("manifest.csv"), &bytes)
}

/// Reads a directory written by [`write_pretext_dataset`].
pub fn load_pretext_examples(dir: &Path) -> Result<(PretextTask, Vec<PretextExample>)> {
    let manifest = dir.join("manifest.csv");
    let bytes = std::fs::read(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut task = None;
    let mut examples = Vec::new();
    for (i, row) in reader.deserialize::<PretextManifestRow>().enumerate() {
        let row_no = i + 1;
        let ingest = |message: String| Error::Ingestion { row: row_no, message };
        let row = row.map_err(|e| ingest(e.to_string()))?;
        let t: PretextTask = row.task.parse().map_err(|e: Error| ingest(e.to_string()))?;
        if *task.get_or_insert(t) != t {
            return Err(ingest(format!("mixed tasks in one dataset ({} and {t})", task.unwrap())));
        }
        let input = Image::read_png(dir.join(&row.input_path)).map_err(|e| ingest(e.to_string()))?;
        let target = if t.predicts_image() {
            Target::Image(Image::read_png(dir.join(&row.target)).map_err(|e| ingest(e.to_string()))?)
        } else {
            let v: f32 = row
                .target
                .parse()
                .map_err(|_| ingest(format!("rotation target '{}' is not a number", row.target)))?;
            if !(0.0..1.0).contains(&v) {
                return Err(ingest(format!("rotation target {v} outside [0, 1)")));
            }
            Target::Label(v)
        };
        examples.push(PretextExample {
            input,
            target,
            task: t,
            seed: row.seed,
        });
    }
    match task {
        Some(t) => Ok((t, examples)),
        None => Err(Error::Usage(format!("{} lists no examples", manifest.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(side: usize) -> Image {
        Image::from_fn(side, side, |r, c| [(r * 7 % 256) as f32, (c * 5 % 256) as f32, ((r + c) % 256) as f32]).unwrap()
    }

    #[test]
    fn forced_angles() {
        let img = ramp(16);
        let ex = rotation_example_at(&img, 0.0, 0).unwrap();
        assert_eq!(ex.input, img);
        assert_eq!(ex.target, Target::Label(0.0));
        let ex = rotation_example_at(&img, 180.0, 0).unwrap();
        assert_eq!(ex.target, Target::Label(0.5));
        assert!(angle_label(360.0f64.next_down()) < 1.0);
    }

    #[test]
    fn full_mask() {
        let img = ramp(8);
        let mut rng = rng_from(1);
        let ex = gen_missing_patch_example(&img, &mut rng, 8).unwrap();
        assert!(ex.input.pixels().iter().all(|&v| v == 0.0));
        assert_eq!(ex.target, Target::Image(img.clone()));
        assert!(gen_missing_patch_example(&img, &mut rng, 9).is_err());
    }

    #[test]
    fn mask_support_bound() {
        let img = Image::filled(20, 20, [100.0; 3]).unwrap();
        let cfg = PretextConfig::default().resolve(20);
        for s in 0..20 {
            let ex = gen_example(&img, PretextTask::Inpaint, &cfg, s).unwrap();
            let Target::Image(t) = &ex.target else { panic!() };
            assert_eq!(ex.input.count_differing_pixels(t), cfg.mask_side * cfg.mask_side);
        }
    }

    #[test]
    fn zero_swaps_identity() {
        let img = ramp(16);
        let ex = gen_corruption_example(&img, &mut rng_from(3), 0, 4).unwrap();
        assert_eq!(Target::Image(ex.input), ex.target);
    }

    #[test]
    fn patch_sizes_scale() {
        let r = PretextConfig::default().resolve(224);
        assert_eq!((r.mask_side, r.swap_patch, r.swap_count), (75, 30, 100));
        let r = PretextConfig::default().resolve(64);
        assert_eq!((r.mask_side, r.swap_patch), (21, 9));
        let fixed = PretextConfig {
            mask_side: Some(5),
            swap_count: 3,
            swap_patch: Some(2),
        };
        assert_eq!(fixed.resolve(64), ResolvedPretextConfig { mask_side: 5, swap_count: 3, swap_patch: 2 });
    }

    #[test]
    fn dataset_errors_and_order() {
        let cfg = PretextConfig::default().resolve(16);
        assert!(matches!(build_pretext_dataset(&[], PretextTask::Rotation, &cfg, 0), Err(Error::Usage(_))));
        let imgs: Vec<Image> = (0..10).map(|i| Image::filled(16, 16, [i as f32 * 20.0; 3]).unwrap()).collect();
        let ds = build_pretext_dataset(&imgs, PretextTask::Corrupt, &cfg, 4).unwrap();
        assert_eq!(ds.examples.len(), 10);
        for (ex, img) in ds.examples.iter().zip(&imgs) {
            assert_eq!(ex.target, Target::Image(img.clone()));
        }
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = vec![ramp(16); 3];
        let cfg = PretextConfig::default().resolve(16);
        for task in PretextTask::ALL {
            let sub = dir.path().join(task.as_str());
            let ds = build_pretext_dataset(&imgs, task, &cfg, 9).unwrap();
            write_pretext_dataset(&ds, &sub).unwrap();
            let (t, back) = load_pretext_examples(&sub).unwrap();
            assert_eq!(t, task);
            // Rotation inputs are bilinear samples and get rounded by PNG.
            for (a, b) in ds.examples.iter().zip(&back) {
                assert_eq!(a.target, b.target);
                assert_eq!(a.seed, b.seed);
                if task != PretextTask::Rotation {
                    assert_eq!(a.input, b.input);
                }
            }
        }
    }

    #[test]
    fn task_names() {
        for t in PretextTask::ALL {
            assert_eq!(t.as_str().parse::<PretextTask>().unwrap(), t);
        }
        assert_eq!("missing_patch".parse::<PretextTask>().unwrap(), PretextTask::Inpaint);
        assert!("jigsaw".parse::<PretextTask>().is_err());
    }
}
