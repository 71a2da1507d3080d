//! Detection evaluation: IoU matching, micro-averaged precision/recall/F1,
//! precision-recall curves and validation-based threshold selection.

pub mod curve;
pub mod matching;
pub mod metrics;
pub mod predictions;
pub mod report;

pub use curve::{counts_at, pr_curve, select_threshold, CurvePoint};
pub use matching::{greedy_visits, iou, match_detections, EvalConfig, MatchCounts};
pub use metrics::{f1, precision, recall, Scores};
pub use predictions::{read_predictions, write_predictions};
pub use report::{evaluate_run, evaluate_scenes, report_csv, report_markdown, scenes_for_split, MetricsReport, Scene};
