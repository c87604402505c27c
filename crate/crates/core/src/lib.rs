//! Criticality-aware spatial multiplexing of concurrent camera streams.
//!
//! Critical regions from `M` cameras are tiled at camera-specific scales,
//! reduced to a minimum-cost covering subset of tiles, and packed onto one
//! fixed-size canvas frame for a single detector pass. Detections are then
//! translated back to their source frames.
//!
//! Module map:
//! - [`geometry`]: boxes, IoU, NMS, similarity transforms, quadtree.
//! - [`scale_profiler`]: object-size clustering into per-camera tile scales.
//! - [`motion`]: frame differencing, ego-motion fit, Kalman centroid tracker.
//! - [`tiling`]: multi-scale bag of tiles and goodness-based mask assignment.
//! - [`setcover`]: wasted-pixel cost and greedy min-cost set cover.
//! - [`packer`]: differential-evolution inverse bin packing.
//! - [`canvas`]: canvas composition and detection back-translation.
//! - [`simulation`]: synthetic scenarios, mock detector and mock OCR.
//! - [`pipeline`]: stabilization / multiplexing alternation, throughput model.
//! - [`metrics`]: mAP@0.5, CER, packing statistics.
//! - [`baselines`]: FCFS and Uniform-M layouts.
//! - [`experiment`]: run / sweep drivers used by the CLI.

pub mod baselines;
pub mod canvas;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod motion;
pub mod packer;
pub mod pipeline;
pub mod scale_profiler;
pub mod setcover;
pub mod simulation;
pub mod tiling;

mod util;

pub use error::{Error, Result};
pub use geometry::{Affine2D, BBox};
