use serde::{Deserialize, Serialize};

use crate::eval::matching::MatchCounts;

/// `tp / (tp + fp)`, or 0 when there are no detections.
pub fn precision(c: &MatchCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

/// `tp / (tp + fn)`, or 0 when there is no ground truth.
pub fn recall(c: &MatchCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    let s = precision + recall;
    if s > 0.0 {
        2.0 * precision * recall / s
    } else {
        0.0
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 of one set of counts, with flags marking the
/// 0/0 cases that were reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
}

impl Scores {
    pub fn from_counts(counts: MatchCounts) -> Self {
        let p = precision(&counts);
        let r = recall(&counts);
        Scores {
            counts,
            precision: p,
            recall: r,
            f1: f1(p, r),
            precision_degenerate: counts.tp + counts.fp == 0,
            recall_degenerate: counts.tp + counts.fn_ == 0,
        }
    }
}
