//! Synthetic data, the on-disk dataset format and visibility sampling.

pub mod dataset;
pub mod rmt;
pub mod synth;
pub mod visibility;

pub use dataset::{import_png, load_dataset, load_sample, read_manifest, save_dataset, Dataset, DatasetInfo};
pub use synth::{generate_dataset, generate_synthetic_sample, DomainStyle, SynthConfig};
pub use visibility::{random_subset, sample_visibility, MaskMode};
