//! Saved classifier directories.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::params::ParamSet;
use crate::training::TrainHistory;

use super::*;

pub const MODEL_CARD: &str = "model.json";
pub const MODEL_WEIGHTS: &str = "weights.sspw";
pub const MODEL_HISTORY: &str = "history.csv";

/// Everything besides the weights needed to reuse a trained classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub schema_version: u32,
    pub spec: ModelSpec,
    pub input: InputTransform,
    pub batch_size: usize,
    pub init: String,
    pub regime: Regime,
    pub seed: u64,
    pub config_hash: String,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

/// Writes `model.json`, `weights.sspw` and `history.csv` into `dir`.
pub fn save_model(dir: &Path, card: &ModelCard, params: &ParamSet, history: &TrainHistory) -> Result<()> {
    crate::io::create_dir(dir)?;
    let json = serde_json::to_string_pretty(card).map_err(|e| Error::Format(e.to_string()))?;
    crate::io::write_atomic(&dir.join(MODEL_CARD), json.as_bytes())?;
    params.save(dir.join(MODEL_WEIGHTS))?;
    crate::io::write_atomic(&dir.join(MODEL_HISTORY), history.to_csv().as_bytes())
}

pub fn load_model(dir: &Path) -> Result<(ModelCard, ParamSet)> {
    let path = dir.join(MODEL_CARD);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let card: ModelCard =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    card.spec.validate()?;
    let params = ParamSet::load(dir.join(MODEL_WEIGHTS))?;
    card.spec.check_params(&params)?;
    Ok((card, params))
}
