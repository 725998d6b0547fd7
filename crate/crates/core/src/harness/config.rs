//! Run configuration: initialisations, regimes and the JSON config sections.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::SynthConfig;
use crate::error::{Error, Result};
use crate::imaging::{Image, PreprocessParams};
use crate::metrics::SsimParams;
use crate::models::EncoderConfig;
use crate::pretext::{PretextConfig, PretextTask};
use crate::training::{EarlyStopping, LossKind, TrainConfig};

use super::*;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "SSPB_THREADS";
pub const DEFAULT_INPUT_SCALE: f32 = 0.015625;

/// Encoder initialisation used by a classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    None,
    Rotation,
    MissingPatch,
    Corruption,
}

impl Init {
    pub const ALL: [Init; 4] = [Init::None, Init::Rotation, Init::MissingPatch, Init::Corruption];

    pub fn task(&self) -> Option<PretextTask> {
        match self {
            Init::None => None,
            Init::Rotation => Some(PretextTask::Rotation),
            Init::MissingPatch => Some(PretextTask::Inpaint),
            Init::Corruption => Some(PretextTask::Corrupt),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Init::None => "none",
            Init::Rotation => "rotation",
            Init::MissingPatch => "missing_patch",
            Init::Corruption => "corruption",
        }
    }

    /// Column heading in the accuracy table.
    pub fn column(&self) -> &'static str {
        match self {
            Init::None => "No self-supervision",
            Init::Rotation => "Rotation prediction",
            Init::MissingPatch => "Missing patch",
            Init::Corruption => "Corruption removal",
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classifier training regime: the full epoch budget, or early stopping
/// with a patience. Written as `none` or `es<patience>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Regime {
    Full,
    Patience(usize),
}

impl Regime {
    pub const DEFAULTS: [Regime; 3] = [Regime::Full, Regime::Patience(3), Regime::Patience(10)];

    pub fn early_stopping(&self, restore_best: bool) -> EarlyStopping {
        match *self {
            Regime::Full => EarlyStopping::DISABLED,
            Regime::Patience(p) => EarlyStopping {
                enabled: true,
                patience: p,
                restore_best,
            },
        }
    }

    /// Row heading in the accuracy table.
    pub fn label(&self, epochs: usize) -> String {
        match self {
            Regime::Full => format!("{epochs} epochs; no Early Stopping"),
            Regime::Patience(p) => format!("{epochs} epochs; Early Stopping (patience level: {p})"),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Full => f.write_str("none"),
            Regime::Patience(p) => write!(f, "es{p}"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Regime::Full);
        }
        match s.strip_prefix("es").and_then(|p| p.parse::<usize>().ok()) {
            Some(p) if p >= 1 => Ok(Regime::Patience(p)),
            _ => Err(Error::Config(format!("unknown regime '{s}' (expected none or es<patience>, e.g. es3)"))),
        }
    }
}

impl TryFrom<String> for Regime {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Regime> for String {
    fn from(r: Regime) -> String {
        r.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    #[serde(default = "default_stages")]
    pub n_stages: usize,
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    #[serde(default = "default_max_channels")]
    pub max_channels: usize,
}

fn default_stages() -> usize {
    3
}
fn default_base_channels() -> usize {
    16
}
fn default_max_channels() -> usize {
    256
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            n_stages: default_stages(),
            base_channels: default_base_channels(),
            max_channels: default_max_channels(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    /// Width of the first decoder block; halves every block.
    #[serde(default = "default_top_channels")]
    pub top_channels: usize,
}

fn default_top_channels() -> usize {
    64
}

impl Default for DecoderSection {
    fn default() -> Self {
        DecoderSection {
            top_channels: default_top_channels(),
        }
    }
}

/// Training settings of one phase. Seeds and early stopping come from the
/// run seed and the regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseTrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_val_split")]
    pub val_split: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// Only used under early stopping.
    #[serde(default)]
    pub restore_best: bool,
}

fn default_epochs() -> usize {
    30
}
fn default_lr() -> f64 {
    0.001
}
fn default_val_split() -> f64 {
    0.2
}
fn default_batch_size() -> usize {
    16
}
fn default_loss() -> LossKind {
    LossKind::Mse
}

impl Default for PhaseTrainConfig {
    fn default() -> Self {
        PhaseTrainConfig {
            epochs: default_epochs(),
            lr: default_lr(),
            val_split: default_val_split(),
            batch_size: default_batch_size(),
            loss: default_loss(),
            restore_best: false,
        }
    }
}

impl PhaseTrainConfig {
    pub fn to_train_config(&self, seed: u64, early_stopping: EarlyStopping) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            val_split: self.val_split,
            batch_size: self.batch_size,
            early_stopping,
            seed,
            loss: self.loss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_balance")]
    pub balance: f64,
    /// Fixed data seed; by default derived from the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_n_train() -> usize {
    600
}
fn default_n_test() -> usize {
    100
}
fn default_balance() -> f64 {
    0.5
}

impl Default for SyntheticSource {
    fn default() -> Self {
        SyntheticSource {
            n_train: default_n_train(),
            n_test: default_n_test(),
            balance: default_balance(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSource),
    /// Manifest paths, relative to the config file when loaded from one.
    Manifest { train: PathBuf, test: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSource::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeansSpec {
    /// `"imagenet"` or `"dataset"` (means of the training images).
    Named(NamedMeans),
    Bgr([f32; 3]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedMeans {
    Imagenet,
    Dataset,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    #[serde(default = "default_means")]
    pub means: MeansSpec,
    /// Multiplies zero-centred pixel values before they reach the network.
    #[serde(default = "default_input_scale")]
    pub scale: f32,
}

fn default_input_scale() -> f32 {
    DEFAULT_INPUT_SCALE
}

fn default_means() -> MeansSpec {
    MeansSpec::Named(NamedMeans::Imagenet)
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            means: default_means(),
            scale: default_input_scale(),
        }
    }
}

impl PreprocessSection {
    pub fn resolve(&self, train_images: &[Image]) -> Result<InputTransform> {
        let preprocess = match self.means {
            MeansSpec::Named(NamedMeans::Imagenet) => PreprocessParams::default(),
            MeansSpec::Named(NamedMeans::Dataset) => PreprocessParams::from_images(train_images)?,
            MeansSpec::Bgr(means_bgr) => PreprocessParams { means_bgr },
        };
        Ok(InputTransform {
            preprocess,
            scale: self.scale,
        })
    }
}

fn default_side() -> usize {
    64
}
fn default_inits() -> Vec<Init> {
    Init::ALL.to_vec()
}
fn default_regimes() -> Vec<Regime> {
    Regime::DEFAULTS.to_vec()
}
fn default_pretext_test_count() -> usize {
    100
}
fn default_seeds() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Number of consecutive seeds (`seed`, `seed + 1`, ...) to average over.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_side")]
    pub image_side: usize,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub decoder: DecoderSection,
    #[serde(default)]
    pub pretext: PretextConfig,
    /// Images of the training pool held out to evaluate the pretext models.
    #[serde(default = "default_pretext_test_count")]
    pub pretext_test_count: usize,
    #[serde(default)]
    pub pretext_train: PhaseTrainConfig,
    #[serde(default)]
    pub classifier_train: PhaseTrainConfig,
    #[serde(default = "default_inits")]
    pub inits: Vec<Init>,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<Regime>,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub ssim: SsimParams,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory relative dataset paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| e.in_phase(format!("config {}", path.display())))?;
        cfg.base_dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Ok(cfg)
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            n_stages: self.encoder.n_stages,
            base_channels: self.encoder.base_channels,
            max_channels: self.encoder.max_channels,
            input_side: self.image_side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_config().validate()?;
        crate::models::decoder_channels(self.encoder.n_stages, self.decoder.top_channels)?;
        for (name, t) in [("pretext_train", &self.pretext_train), ("classifier_train", &self.classifier_train)] {
            t.to_train_config(0, EarlyStopping::DISABLED)
                .validate()
                .map_err(|e| e.in_phase(name))?;
        }
        if self.regimes.is_empty() {
            return Err(Error::Config("regimes must not be empty".into()));
        }
        if self.inits.is_empty() {
            return Err(Error::Config("inits must not be empty".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        let p = self.pretext.resolve(self.image_side);
        if p.mask_side == 0 || p.mask_side > self.image_side {
            return Err(Error::Config(format!("mask side {} does not fit a {} image", p.mask_side, self.image_side)));
        }
        if p.swap_patch == 0 || 2 * p.swap_patch > self.image_side {
            return Err(Error::Config(format!(
                "two swap patches of side {} do not fit a {} image",
                p.swap_patch, self.image_side
            )));
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            SynthConfig::new(s.n_train, self.image_side, 0).validate()?;
            if s.n_test == 0 {
                return Err(Error::Config("n_test must be >= 1".into()));
            }
            if !(0.0..=1.0).contains(&s.balance) {
                return Err(Error::Config(format!("balance must be in [0, 1], got {}", s.balance)));
            }
        }
        if !(self.preprocess.scale.is_finite() && self.preprocess.scale > 0.0) {
            return Err(Error::Config(format!("input scale must be finite and > 0, got {}", self.preprocess.scale)));
        }
        self.ssim.validate()?;
        Ok(())
    }

    /// Compact JSON of every field, defaults filled in. Field order follows
    /// the struct, so equal configs serialise identically.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|j| self.seed.wrapping_add(j)).collect()
    }

    pub(super) fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}
