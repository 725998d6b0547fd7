//! Train/test images of a run and the image ↔ tensor transform.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_manifest, synthesize, LabeledExample, SynthConfig};
use crate::error::{Error, Result};
use crate::imaging::{deprocess, preprocess, ChannelOrder, Image, PreprocessParams};
use crate::rng::split_str;
use crate::tensor::Tensor;

use super::*;

/// Held-out images with a read counter, so tests can assert the set is
/// consulted once per evaluation and never during training.
#[derive(Debug)]
pub struct TestSet {
    examples: Vec<LabeledExample>,
    reads: AtomicUsize,
}

impl TestSet {
    pub fn new(examples: Vec<LabeledExample>) -> Self {
        TestSet {
            examples,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn read(&self) -> &[LabeledExample] {
        self.reads.fetch_add(1, Ordering::SeqCst);
        &self.examples
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub(crate) fn source_ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.source_id.as_str())
    }
}

/// Training pool and test set of one seed.
#[derive(Debug)]
pub struct Data {
    pub train: Vec<LabeledExample>,
    pub test: TestSet,
}

pub fn load_data(cfg: &RunConfig, seed: u64) -> Result<Data> {
    let (train, test) = match &cfg.dataset {
        DatasetSource::Synthetic(s) => {
            let data_seed = s.seed.unwrap_or(seed);
            let make = |n: usize, label: &str| {
                synthesize(&SynthConfig {
                    n,
                    side: cfg.image_side,
                    seed: split_str(data_seed, label),
                    balance: s.balance,
                })
            };
            (make(s.n_train, "train")?, make(s.n_test, "test")?)
        }
        DatasetSource::Manifest { train, test } => (
            load_manifest(cfg.resolve_path(train))?,
            load_manifest(cfg.resolve_path(test))?,
        ),
    };
    for e in train.iter().chain(&test) {
        if e.image.dims() != (cfg.image_side, cfg.image_side) {
            return Err(Error::Shape(format!(
                "{} is {:?}, expected {}×{}",
                e.source_id,
                e.image.dims(),
                cfg.image_side,
                cfg.image_side
            )));
        }
    }
    let train_ids: BTreeSet<&str> = train.iter().map(|e| e.source_id.as_str()).collect();
    let test = TestSet::new(test);
    if let Some(shared) = test.source_ids().find(|id| train_ids.contains(id)) {
        return Err(Error::Usage(format!("source '{shared}' is in both the training and test sets")));
    }
    Ok(Data { train, test })
}

/// Image ↔ network tensor conversion: channel flip and mean subtraction,
/// then a uniform scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputTransform {
    pub preprocess: PreprocessParams,
    pub scale: f32,
}

impl InputTransform {
    pub fn encode(&self, img: &Image) -> Result<Tensor<f32>> {
        let k = self.scale;
        Ok(preprocess(img, &self.preprocess)?.to_tensor().map(|v| v * k))
    }

    /// Canonical image from a predicted tensor, clamped to the pixel range.
    pub fn decode(&self, t: &Tensor<f32>) -> Result<Image> {
        let k = self.scale;
        let bgr = Image::from_tensor(&t.map(|v| v / k), ChannelOrder::Bgr)?;
        deprocess(&bgr, &self.preprocess, true)
    }
}

pub fn to_input(img: &Image, pre: &InputTransform) -> Result<Tensor<f32>> {
    pre.encode(img)
}
