//! Tumor detection toolkit for grayscale scans.
//!
//! The pipeline mirrors a classic two-stage approach: denoise the slice
//! ([`imgproc`]), cluster pixel intensities to isolate the bright tumor
//! region ([`segment`]), score the predicted region against ground truth
//! ([`metrics`]), and train a small residual CNN with Adam on binary
//! cross-entropy ([`nn`]), with stochastic augmentation ([`augment`]).
//! [`dataset`] handles manifests and splits, [`pipeline`] wires the
//! command-line workflow together.

pub mod augment;
pub mod config;
pub mod dataset;
mod error;
pub mod imgproc;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod seed;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
pub use imgproc::{GrayImage, RgbImage};
pub use segment::BinaryMask;
