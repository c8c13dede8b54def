//! Evaluation and calibration toolkit for 3D lesion segmentation models.

pub mod anatomy;
pub mod cli;
pub mod corruption;
pub mod error;
pub mod folds;
pub mod harness;
pub mod metrics;
pub mod morphology;
pub mod nifti;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, GridVolume, ProbabilityMap};
