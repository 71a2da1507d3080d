use crate::eval::iou;
use crate::types::BoundingBox;

/// Square anchors centred on every cell of a `grid x grid` map over a
/// `size x size` image, ordered by (row, column, scale).
pub fn make_anchors(size: u32, grid: usize, scales: &[f64]) -> Vec<BoundingBox> {
    let stride = size as f64 / grid as f64;
    let mut out = Vec::with_capacity(grid * grid * scales.len());
    for gy in 0..grid {
        for gx in 0..grid {
            let (cx, cy) = ((gx as f64 + 0.5) * stride, (gy as f64 + 0.5) * stride);
            for s in scales {
                let half = 0.5 * s * size as f64;
                out.push(BoundingBox {
                    x_min: cx - half,
                    y_min: cy - half,
                    x_max: cx + half,
                    y_max: cy + half,
                });
            }
        }
    }
    out
}

/// Largest log-scale change a decoded box may apply.
const MAX_LOG_SCALE: f64 = 4.135; // ln(1000 / 16)

/// Regression targets `(dx, dy, dw, dh)` of `gt` relative to `anchor`.
pub fn encode(anchor: &BoundingBox, gt: &BoundingBox) -> [f64; 4] {
    let (acx, acy) = anchor.center();
    let (gcx, gcy) = gt.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    [
        (gcx - acx) / aw,
        (gcy - acy) / ah,
        (gt.width() / aw).ln(),
        (gt.height() / ah).ln(),
    ]
}

pub fn decode(anchor: &BoundingBox, d: [f64; 4]) -> BoundingBox {
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let (cx, cy) = (acx + d[0] * aw, acy + d[1] * ah);
    let w = aw * d[2].min(MAX_LOG_SCALE).exp();
    let h = ah * d[3].min(MAX_LOG_SCALE).exp();
    BoundingBox {
        x_min: cx - 0.5 * w,
        y_min: cy - 0.5 * h,
        x_max: cx + 0.5 * w,
        y_max: cy + 0.5 * h,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Negative,
    Ignore,
    /// Index of the matched ground-truth box.
    Positive(usize),
}

/// Anchors with IoU >= `positive` to some box are positive (for their best
/// box), below `negative` to all boxes negative, otherwise ignored. Each box
/// also claims its single best anchor so none goes unmatched.
pub fn assign(anchors: &[BoundingBox], gts: &[BoundingBox], positive: f64, negative: f64) -> Vec<Assignment> {
    let mut out = vec![Assignment::Negative; anchors.len()];
    if gts.is_empty() {
        return out;
    }
    let mut best_for_gt = vec![(f64::NEG_INFINITY, 0usize); gts.len()];
    for (ai, a) in anchors.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (gi, g) in gts.iter().enumerate() {
            let v = iou(a, g);
            if v > best.0 {
                best = (v, gi);
            }
            if v > best_for_gt[gi].0 {
                best_for_gt[gi] = (v, ai);
            }
        }
        out[ai] = if best.0 >= positive {
            Assignment::Positive(best.1)
        } else if best.0 < negative {
            Assignment::Negative
        } else {
            Assignment::Ignore
        };
    }
    for (gi, (v, ai)) in best_for_gt.into_iter().enumerate() {
        if v > 0.0 {
            out[ai] = Assignment::Positive(gi);
        }
    }
    out
}

/// Greedy non-maximum suppression over `(box, score)` pairs already sorted by
/// descending score; returns the kept indices.
pub fn nms(items: &[(BoundingBox, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for (i, (b, _)) in items.iter().enumerate() {
        if keep.iter().all(|&k| iou(&items[k].0, b) <= iou_threshold) {
            keep.push(i);
        }
    }
    keep
}
