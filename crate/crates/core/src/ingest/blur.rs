use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{grayscale, load_rgb};
use crate::types::ImageRecord;

/// Focus measure: variance of the 4-neighbour Laplacian of the luma image.
/// Larger is sharper.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct BlurScore(pub f64);

pub fn blur_score(img: &RgbImage) -> Result<BlurScore> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Shape("blur_score of an empty image".into()));
    }
    let g = grayscale(img);
    let (h, w) = (g.len(), g[0].len());
    if h < 3 || w < 3 {
        return Ok(BlurScore(0.0));
    }
    let mut values = Vec::with_capacity((h - 2) * (w - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            values.push(g[y - 1][x] + g[y + 1][x] + g[y][x - 1] + g[y][x + 1] - 4.0 * g[y][x]);
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(BlurScore(var.max(0.0)))
}

/// Picks a threshold between the low-score (blurry) mode and the rest by
/// Otsu's criterion on `ln(1 + score)`. Returns 0 when all scores coincide.
pub fn auto_threshold(scores: &[BlurScore]) -> f64 {
    const BINS: usize = 64;
    let logs: Vec<f64> = scores.iter().map(|s| s.0.ln_1p()).collect();
    let (lo, hi) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if logs.is_empty() || hi - lo <= 0.0 {
        return 0.0;
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for v in &logs {
        hist[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    let total = logs.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best.1 {
            best = (i, between);
        }
    }
    (lo + (best.0 + 1) as f64 * width).exp_m1()
}

#[derive(Debug)]
pub struct BlurFilterOutcome {
    pub kept: Vec<ImageRecord>,
    pub dropped: Vec<ImageRecord>,
    /// Records whose image could not be read; they are in neither list.
    pub failed: Vec<(ImageRecord, Error)>,
}

/// Splits records by `blur_score >= threshold`, preserving order in each
/// list. Record paths are resolved against `base_dir`.
pub fn filter_blurry(records: Vec<ImageRecord>, threshold: f64, base_dir: &Path) -> Result<BlurFilterOutcome> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("blur threshold {threshold} must be >= 0")));
    }
    let mut out = BlurFilterOutcome {
        kept: Vec::new(),
        dropped: Vec::new(),
        failed: Vec::new(),
    };
    for r in records {
        let score = load_rgb(&base_dir.join(&r.path)).and_then(|img| blur_score(&img));
        match score {
            Ok(s) if s.0 >= threshold => out.kept.push(r),
            Ok(_) => out.dropped.push(r),
            Err(e) => out.failed.push((r, e)),
        }
    }
    Ok(out)
}
