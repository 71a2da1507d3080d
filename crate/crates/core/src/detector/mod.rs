//! Pluggable detector interface and the reference anchor-grid detector.

pub mod anchors;
pub mod config;
pub mod model;
pub mod preprocess;
pub mod train;

pub use config::DetectorConfig;
pub use model::{AnchorGridDetector, DetectionLoss, Detector, DetectorCheckpoint, EpochRecord, Fingerprint, Target};
pub use preprocess::{preprocess, ResizeTransform};
pub use train::{detect_split, train_detector};
