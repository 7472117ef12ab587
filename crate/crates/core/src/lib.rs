//! Temporally stable heatmap landmark detection.
//!
//! A backbone emits one heatmap per landmark per frame. A ConvLSTM stage
//! smooths those heatmaps across time, a thresholded centroid decoder turns
//! them into sub-pixel coordinates, and fine-tuning uses a loss whose per-landmark
//! weight grows with frame-to-frame inconsistency.

pub mod convlstm;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod heatmap;
pub mod loss;
pub mod metrics;
pub mod postproc;

pub use error::{Error, Result};
pub use heatmap::{Heatmap, HeatmapStack, LandmarkSet, Point2};
