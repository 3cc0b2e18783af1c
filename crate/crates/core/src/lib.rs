//! Training-free template detection over segment proposals.

pub mod classify;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod histfilter;
pub mod image;
pub mod mask;
pub mod pipeline;
pub mod proposals;
pub mod synth;
pub mod textremoval;

pub use config::{HistogramRegion, MetricMode, OverlapMode, PipelineConfig};
pub use error::{Error, ErrorKind, Result};
pub use geometry::{coverage, iou, BoundingBox};
pub use image::ImageBuffer;
pub use mask::{Bitmap, SegmentMask};
pub use pipeline::{DetectStats, Detector, ImageDetections};
