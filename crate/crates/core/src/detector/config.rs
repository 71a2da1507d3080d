use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PolypClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Square working resolution; a multiple of `2^downsamplings`.
    pub image_size: u32,
    pub epochs: usize,
    pub base_lr: f64,
    /// Detections below this confidence are not emitted.
    pub confidence_floor: f64,
    /// Classes the model separates; a single entry makes it class-agnostic.
    pub classes: Vec<PolypClass>,
    pub seed: u64,
    pub nms_iou: f64,
    pub max_detections: usize,
    /// Base trunk width.
    pub width: usize,
    /// Number of stride-2 convolutions in the trunk.
    pub downsamplings: usize,
    /// Anchor sides as fractions of `image_size`.
    pub anchor_scales: Vec<f64>,
    pub positive_iou: f64,
    pub negative_iou: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub box_loss_weight: f64,
    pub smooth_l1_beta: f64,
    pub horizontal_flip: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            image_size: 512,
            epochs: 30,
            base_lr: 1e-3,
            confidence_floor: 0.05,
            classes: vec![PolypClass::Unknown],
            seed: 0,
            nms_iou: 0.5,
            max_detections: 20,
            width: 16,
            downsamplings: 3,
            anchor_scales: vec![0.1, 0.2, 0.3, 0.45],
            positive_iou: 0.5,
            negative_iou: 0.4,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            box_loss_weight: 1.0,
            smooth_l1_beta: 1.0 / 9.0,
            horizontal_flip: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let stride = 1u32 << self.downsamplings.min(16);
        if self.image_size == 0 || self.image_size % stride != 0 {
            return bad(format!("image_size {} must be a positive multiple of {stride}", self.image_size));
        }
        if !(0.0..1.0).contains(&self.confidence_floor) {
            return bad(format!("confidence_floor {} must be in [0, 1)", self.confidence_floor));
        }
        if self.classes.is_empty() {
            return bad("class set is empty".into());
        }
        if self.classes.len() > 1 && self.classes.contains(&PolypClass::Unknown) {
            return bad("`unknown` cannot be one of several classes".into());
        }
        if self.anchor_scales.is_empty() || self.anchor_scales.iter().any(|s| !(*s > 0.0)) {
            return bad("anchor scales must be positive".into());
        }
        if !(self.negative_iou <= self.positive_iou) {
            return bad("negative_iou must not exceed positive_iou".into());
        }
        if self.epochs == 0 || !(self.base_lr > 0.0) || self.width == 0 || self.max_detections == 0 {
            return bad("epochs, base_lr, width and max_detections must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        (self.image_size >> self.downsamplings) as usize
    }

    /// Index of `class` in the class set.
    pub fn class_index(&self, class: PolypClass) -> Option<usize> {
        if self.classes.len() == 1 {
            return Some(0);
        }
        self.classes.iter().position(|&c| c == class)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: DetectorConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
