use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BoundingBox, Detection};

/// Matching thresholds. A detection counts as a true positive when its
/// confidence is at least `confidence_threshold` and its IoU with an
/// unmatched ground truth is strictly greater than `iou_threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            confidence_threshold: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn new(iou_threshold: f64, confidence_threshold: f64) -> Result<Self> {
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "iou threshold {iou_threshold} outside (0, 1]"
            )));
        }
        if !(0.0..=1.0).contains(&confidence_threshold) {
            return Err(Error::InvalidArgument(format!(
                "confidence threshold {confidence_threshold} outside [0, 1]"
            )));
        }
        Ok(EvalConfig {
            iou_threshold,
            confidence_threshold,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: MatchCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> Self {
        iter.fold(MatchCounts::default(), |a, b| a + b)
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy one-to-one matching.
///
/// Detections under the confidence threshold are dropped; the rest are
/// visited by descending confidence (ties keep input order), each taking the
/// unmatched ground truth of highest IoU (ties to the lower index) if that IoU
/// exceeds the IoU threshold.
pub fn match_detections(dets: &[Detection], gts: &[BoundingBox], config: &EvalConfig) -> MatchCounts {
    let kept: Vec<Detection> = dets
        .iter()
        .filter(|d| d.confidence >= config.confidence_threshold)
        .copied()
        .collect();
    let visits = greedy_visits(&kept, gts, config.iou_threshold);
    let tp = visits.iter().filter(|v| v.1).count() as u64;
    MatchCounts {
        tp,
        fp: visits.len() as u64 - tp,
        fn_: gts.len() as u64 - tp,
    }
}

/// `(confidence, matched)` for every detection in greedy visiting order.
///
/// A detection's outcome depends only on the detections visited before it,
/// so the matching at any confidence threshold is a prefix of this list.
pub fn greedy_visits(dets: &[Detection], gts: &[BoundingBox], iou_threshold: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for (j, gt) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let v = iou(&dets[i].bbox, gt);
                if v > iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            (dets[i].confidence, best.is_some())
        })
        .collect()
}
