//! Satellite image splice detection and localization.
//!
//! An undercomplete convolutional autoencoder is trained (optionally
//! fine-tuned adversarially) on pristine 64x64 patches. Its bottleneck
//! features feed a one-class SVM; patches scored as outliers mark forged
//! regions, and per-patch scores are assembled into soft and binary masks.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod models;
pub mod numerics;
pub mod ocsvm;
pub mod pipeline;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
