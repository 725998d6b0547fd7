//! Self-supervised pretext pretraining toolkit.
//!
//! Rotation prediction, missing-patch completion and patch-swap corruption
//! removal are trained on a small convolutional encoder; the learned
//! encoder weights then initialise a binary image classifier, which is
//! compared against random initialisation.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`], [`ops`], [`autograd`], [`optim`], [`params`]: numerics
//! * [`imaging`]: images, corruptions and preprocessing
//! * [`pretext`]: supervised pairs for the three pretext tasks
//! * [`models`]: encoder, heads, weight transfer
//! * [`training`]: the epoch loop and early stopping
//! * [`metrics`]: accuracy, MSE, error spread, AAD, SSIM
//! * [`dataset`]: manifest loading and synthetic lesion images
//! * [`harness`]: run configuration, phases, matrix runner and reports

pub mod autograd;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod models;
pub mod ops;
pub mod optim;
pub mod params;
pub mod pretext;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autograd::{Gradients, Graph, Var};
pub use dataset::{LabeledExample, SynthConfig};
pub use error::{Error, Result};
pub use harness::{Init, Regime, RunConfig, RunReport};
pub use imaging::{ChannelOrder, Image, PreprocessParams, SwapRecord};
pub use models::{EncoderConfig, LayerOpKind, ModelSpec};
pub use optim::{AdamConfig, AdamState};
pub use params::ParamSet;
pub use tensor::{Real, Tensor};
pub use training::{EarlyStopping, LossKind, Sample, TrainConfig, TrainHistory};
