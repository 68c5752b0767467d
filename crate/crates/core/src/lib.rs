//! Point-cloud backdoor lab.
//!
//! Implements the weighted-local-transformation (WLT) trigger for poisoning
//! 3D point-cloud classifiers, the classic ball / rotation baseline triggers,
//! the defender's pre-processing arsenal (statistical outlier removal, random
//! sampling, augmentations, adaptive WLT smoothing), poisoned-dataset
//! construction, and a small trainable max-pool classifier with hand-written
//! gradients so the whole attack/defense loop runs on a laptop core.
//!
//! The crate is a library first; the `pointblank` binary in the companion
//! crate drives end-to-end experiments.

// `!(x > 0.0)` is the deliberate NaN-rejecting form of these parameter checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod trigger;

pub use error::{Error, Result};
pub use geometry::{Point, PointCloud};
