//! Experiment orchestration: pretext phases, initialisation × regime
//! classification matrix, and the report files.

mod config;
mod data;
mod matrix;
mod model_dir;
mod phases;
mod report;

pub use config::*;
pub use data::*;
pub use matrix::*;
pub use model_dir::*;
pub use phases::*;
pub use report::*;
