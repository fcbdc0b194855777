//! Weakly supervised toad detection at desk scale.
//!
//! A fully convolutional network is trained to regress per-cell Gaussian
//! heat-maps synthesized from bounding-box masks; wrapping the same network
//! with a global max pool turns it into a whole-image binary classifier.
//! Everything runs on CPU: synthetic scene generation, paired image/mask
//! augmentation, training with plateau-driven learning-rate decay and
//! warm restarts, and evaluation with confusion-matrix reporting.

pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod targets;
pub mod train;

pub use error::{Error, Result};
