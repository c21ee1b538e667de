//! Multi-domain image completion with a shared content code and per-domain styles.
//!
//! The crate covers the networks ([`model`]), the training objectives ([`losses`]),
//! synthetic data and the dataset format ([`data`]), the optimization loop ([`trainer`]) and
//! metrics, imputation baselines and evaluation protocols ([`eval`]).

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod model;
pub mod params;
pub mod trainer;

pub use config::{ModelConfig, RunConfig, SegInput, SegMode};
pub use error::{RemicError, Result};
pub use image::{Image, LabelMap, Sample, VisibilityMask};
pub use losses::LossWeights;
pub use model::{ContentCode, Remic, StyleCode, StylePolicy};
pub use trainer::{TrainConfig, Trainer};
