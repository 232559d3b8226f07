//! Distribution-aware calibration of noisy bounding-box annotations.
//!
//! Proposals around each annotated object are summarized as a weighted
//! Gaussian over box corners. The distribution is used to augment proposals,
//! to refine the noisy ground truth toward the distribution mean, and as a
//! target for a localization-confidence estimator consumed by variance-voting
//! NMS. A synthetic harness with a surrogate detection head exercises the
//! full training-time pipeline.

pub mod calibration;
pub mod distribution;
pub mod error;
pub mod estimation;
pub mod geometry;
pub mod harness;
pub mod noise_sim;
pub mod rng;
pub mod surrogate;

pub use error::{Error, Result};
pub use geometry::{iou, BoxCenterSize, BoxCorners, BoxDelta};
