//! Task losses, region-to-ground-truth assignment, box coding and
//! PASCAL-style average precision.

mod assign;
mod bbox;
mod eval;
mod loss;
mod metrics;
mod precision;

pub use crate::geometry::{iou, BBox};
pub use assign::{assign_regions, AssignConfig, RegionTargets};
pub use bbox::{bbox_decode, bbox_encode};
pub use eval::{
    evaluate, ClassAps, EvalConfig, ImagePrediction, Metrics, RegionPrediction, SceneTruth,
};
pub use metrics::{read_metrics_csv, write_metrics_csv, MetricRow, METRICS_HEADER};
pub use precision::{ap_from_ranked, average_precision, nms, ApMethod, Detection};

/// IoU threshold for object detections to count as correct.
pub const DET_IOU: f64 = 0.5;
/// Relaxed IoU threshold for part detections.
pub const PART_IOU: f64 = 0.4;
/// Class-wise non-maximum suppression threshold.
pub const NMS_IOU: f64 = 0.3;
