use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::matching::{greedy_visits, match_detections, EvalConfig, MatchCounts};
use crate::eval::metrics::{f1, precision, recall};
use crate::types::{BoundingBox, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

impl CurvePoint {
    pub fn f1(&self) -> f64 {
        f1(self.precision, self.recall)
    }
}

/// Micro-averaged counts over all images at one confidence threshold.
pub fn counts_at(
    predictions: &[Vec<Detection>],
    ground_truths: &[Vec<BoundingBox>],
    iou_threshold: f64,
    confidence_threshold: f64,
) -> MatchCounts {
    let cfg = EvalConfig {
        iou_threshold,
        confidence_threshold,
    };
    predictions
        .iter()
        .zip(ground_truths)
        .map(|(d, g)| match_detections(d, g, &cfg))
        .sum()
}

/// Precision/recall traced over every distinct detection confidence, plus the
/// endpoints 0 and 1. Thresholds are strictly increasing. With no detections
/// at all the curve is the single point `(0, 0, 0)`.
pub fn pr_curve(
    predictions: &[Vec<Detection>],
    ground_truths: &[Vec<BoundingBox>],
    iou_threshold: f64,
) -> Result<Vec<CurvePoint>> {
    if predictions.is_empty() || predictions.len() != ground_truths.len() {
        return Err(Error::InvalidArgument(format!(
            "pr_curve needs matching non-empty image lists ({} predictions, {} ground truths)",
            predictions.len(),
            ground_truths.len()
        )));
    }
    // One greedy pass per image; each threshold then counts a prefix.
    let mut visits: Vec<(f64, bool)> = predictions
        .iter()
        .zip(ground_truths)
        .flat_map(|(d, g)| greedy_visits(d, g, iou_threshold))
        .collect();
    if visits.is_empty() {
        return Ok(vec![CurvePoint {
            threshold: 0.0,
            precision: 0.0,
            recall: 0.0,
        }]);
    }
    let n_gt: u64 = ground_truths.iter().map(|g| g.len() as u64).sum();
    visits.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut thresholds: Vec<f64> = visits.iter().map(|v| v.0).collect();
    thresholds.push(0.0);
    thresholds.push(1.0);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let (mut next, mut tp, mut fp) = (0, 0u64, 0u64);
    let mut curve: Vec<CurvePoint> = thresholds
        .into_iter()
        .map(|t| {
            while next < visits.len() && visits[next].0 >= t {
                if visits[next].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                next += 1;
            }
            let c = MatchCounts { tp, fp, fn_: n_gt - tp };
            CurvePoint {
                threshold: t,
                precision: precision(&c),
                recall: recall(&c),
            }
        })
        .collect();
    curve.reverse();
    Ok(curve)
}

/// Threshold of maximal F1; ties go to the lowest threshold.
pub fn select_threshold(curve: &[CurvePoint]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    let mut sorted = curve.to_vec();
    sorted.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    for p in &sorted {
        let score = p.f1();
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((p.threshold, score));
        }
    }
    best.map(|(t, _)| t)
        .ok_or_else(|| Error::InvalidArgument("empty precision-recall curve".into()))
}
