use image::GrayImage;

use crate::error::{Error, Result};
use crate::types::BoundingBox;

pub const DEFAULT_MIN_AREA: usize = 64;

/// Thresholds a grey mask (e.g. a lossy-compressed export) at `level`,
/// producing the strictly binary `{0, 255}` mask [`mask_to_bboxes`] expects.
pub fn binarize(mask: &GrayImage, level: u8) -> GrayImage {
    GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        image::Luma([if mask.get_pixel(x, y)[0] >= level { 255 } else { 0 }])
    })
}

/// Tight boxes of the 8-connected foreground components holding at least
/// `min_area` pixels, sorted by `(y_min, x_min)`.
///
/// The mask must be strictly binary: zero background plus a single
/// foreground value.
pub fn mask_to_bboxes(mask: &GrayImage, min_area: usize) -> Result<Vec<BoundingBox>> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let raw = mask.as_raw();
    let mut fg_value = None;
    for &v in raw {
        if v != 0 && *fg_value.get_or_insert(v) != v {
            return Err(Error::validation(
                "mask",
                format!("not binary: found values {} and {v}", fg_value.unwrap_or(0)),
            ));
        }
    }
    let mut seen = vec![false; w * h];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if raw[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0usize;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if raw[j] != 0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if area >= min_area {
            boxes.push(BoundingBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64)?);
        }
    }
    boxes.sort_by(|a, b| a.y_min.total_cmp(&b.y_min).then(a.x_min.total_cmp(&b.x_min)));
    Ok(boxes)
}
