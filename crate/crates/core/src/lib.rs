//! Evaluation, pseudo-ground-truth guided fusion and confusion-guided mixup
//! for instance segmentation results.
//!
//! The modules map onto the processing stages:
//!
//! * [`mask`] and [`geometry`]: RLE masks, boxes and IoU.
//! * [`coco`]: COCO-style dataset and result files.
//! * [`eval`]: COCO-protocol AP, batch and incremental.
//! * [`fusion`]: greedy per-image model selection against a controller's
//!   high-confidence detections.
//! * [`confusion`]: category confusion and guided pairs.
//! * [`mixup`]: guided mixup augmentation.
//! * [`synth`]: synthetic datasets and noisy predictions.

pub mod coco;
pub mod confusion;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod mask;
pub mod mixup;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use eval::{evaluate, ApReport, EvalAccumulator, EvalConfig};
pub use geometry::{box_iou, BBox};
pub use mask::{bbox_from_mask, mask_iou, rle_decode, rle_encode, Bitmask, SegMask};
pub use types::{Category, Dataset, ImageGroups, ImageId, ImageRecord, Instance, IouMode};

/// Version tag written into every JSON document the CLI emits.
pub const SCHEMA_VERSION: u32 = 1;
