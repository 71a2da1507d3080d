use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::grayscale;
use crate::types::BoundingBox;

pub const DEFAULT_INTENSITY_THRESHOLD: f64 = 10.0 / 255.0;
pub const DEFAULT_MIN_FRACTION: f64 = 0.25;

/// Region kept by a crop, in source-image pixel-edge coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRegion {
    pub bbox: BoundingBox,
}

impl CropRegion {
    pub fn full(width: u32, height: u32) -> Self {
        CropRegion {
            bbox: BoundingBox {
                x_min: 0.0,
                y_min: 0.0,
                x_max: width as f64,
                y_max: height as f64,
            },
        }
    }

    pub fn offset(&self) -> (u32, u32) {
        (self.bbox.x_min as u32, self.bbox.y_min as u32)
    }

    pub fn size(&self) -> (u32, u32) {
        (self.bbox.width() as u32, self.bbox.height() as u32)
    }

    /// Maps a source-image box into the crop, clipping to it.
    pub fn map_box(&self, b: &BoundingBox) -> Option<BoundingBox> {
        let (w, h) = self.size();
        b.shifted(self.bbox.x_min, self.bbox.y_min).clamp_to(w, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CropWarning {
    /// No row or column reached the intensity threshold.
    AllDark,
    /// The bright region was smaller than the minimum area fraction.
    BelowMinFraction,
}

#[derive(Debug, Clone)]
pub struct CropOutcome {
    pub image: RgbImage,
    pub region: CropRegion,
    pub warning: Option<CropWarning>,
}

/// Removes dark borders: keeps the smallest rectangle spanning every row and
/// column whose mean luma (scaled to `[0, 1]`) is at least
/// `intensity_threshold`. Falls back to the full image, with a warning, when
/// nothing qualifies or the rectangle covers less than `min_fraction` of the
/// area.
pub fn crop_black_borders(img: &RgbImage, intensity_threshold: f64, min_fraction: f64) -> Result<CropOutcome> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Shape("crop of an empty image".into()));
    }
    let g = grayscale(img);
    let row_means: Vec<f64> = g
        .iter()
        .map(|row| row.iter().sum::<f64>() / (w as f64 * 255.0))
        .collect();
    let col_means: Vec<f64> = (0..w as usize)
        .map(|x| g.iter().map(|row| row[x]).sum::<f64>() / (h as f64 * 255.0))
        .collect();
    let span = |means: &[f64]| {
        let first = means.iter().position(|&m| m >= intensity_threshold)?;
        let last = means.iter().rposition(|&m| m >= intensity_threshold)?;
        Some((first, last + 1))
    };
    let full = |warning| CropOutcome {
        image: img.clone(),
        region: CropRegion::full(w, h),
        warning,
    };
    let (Some((y0, y1)), Some((x0, x1))) = (span(&row_means), span(&col_means)) else {
        return Ok(full(Some(CropWarning::AllDark)));
    };
    let area = ((x1 - x0) * (y1 - y0)) as f64;
    if area < min_fraction * (w as f64 * h as f64) {
        return Ok(full(Some(CropWarning::BelowMinFraction)));
    }
    let region = CropRegion {
        bbox: BoundingBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64)?,
    };
    let image = image::imageops::crop_imm(img, x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32).to_image();
    Ok(CropOutcome {
        image,
        region,
        warning: None,
    })
}
