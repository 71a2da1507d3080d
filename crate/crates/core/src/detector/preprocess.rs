use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::resize;
use crate::types::BoundingBox;

/// Axis scaling between a native image and the square working resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizeTransform {
    pub native_width: u32,
    pub native_height: u32,
    pub size: u32,
}

impl ResizeTransform {
    pub fn new(native_width: u32, native_height: u32, size: u32) -> Result<Self> {
        if native_width == 0 || native_height == 0 || size == 0 {
            return Err(Error::Shape(format!(
                "cannot map {native_width}x{native_height} to {size}x{size}"
            )));
        }
        Ok(ResizeTransform {
            native_width,
            native_height,
            size,
        })
    }

    fn scales(&self) -> (f64, f64) {
        (
            self.size as f64 / self.native_width as f64,
            self.size as f64 / self.native_height as f64,
        )
    }

    pub fn is_identity(&self) -> bool {
        self.native_width == self.size && self.native_height == self.size
    }

    /// Native to working coordinates.
    pub fn forward(&self, b: &BoundingBox) -> BoundingBox {
        let (sx, sy) = self.scales();
        BoundingBox {
            x_min: b.x_min * sx,
            y_min: b.y_min * sy,
            x_max: b.x_max * sx,
            y_max: b.y_max * sy,
        }
    }

    /// Working to native coordinates, clamped to the native image; `None`
    /// when nothing of the box remains inside it.
    pub fn inverse(&self, b: &BoundingBox) -> Option<BoundingBox> {
        let (sx, sy) = self.scales();
        BoundingBox {
            x_min: b.x_min / sx,
            y_min: b.y_min / sy,
            x_max: b.x_max / sx,
            y_max: b.y_max / sy,
        }
        .clamp_to(self.native_width, self.native_height)
    }
}

/// Resizes to `size x size` (aspect ratio not kept) and maps the boxes.
pub fn preprocess(img: &RgbImage, boxes: &[BoundingBox], size: u32) -> Result<(RgbImage, Vec<BoundingBox>, ResizeTransform)> {
    let t = ResizeTransform::new(img.width(), img.height(), size)?;
    let mapped = boxes.iter().map(|b| t.forward(b)).collect();
    Ok((resize(img, size, size), mapped, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn square_at_working_size_is_identity() {
        let img = RgbImage::new(512, 512);
        let b = BoundingBox::new(10.0, 20.0, 30.0, 40.0).unwrap();
        let (out, boxes, t) = preprocess(&img, &[b], 512).unwrap();
        assert!(t.is_identity());
        assert_eq!(out.dimensions(), (512, 512));
        assert_eq!(boxes, vec![b]);
    }

    #[test]
    fn wide_image_round_trip() {
        let img = RgbImage::new(1024, 512);
        let b = BoundingBox::new(100.0, 100.0, 200.0, 200.0).unwrap();
        let (_, boxes, t) = preprocess(&img, &[b], 512).unwrap();
        assert_eq!(boxes[0], BoundingBox::new(50.0, 100.0, 100.0, 200.0).unwrap());
        let back = t.inverse(&boxes[0]).unwrap();
        assert!((back.x_min - 100.0).abs() <= 1.0 && (back.x_max - 200.0).abs() <= 1.0);
    }

    #[test]
    fn corner_pixel_survives() {
        let t = ResizeTransform::new(640, 480, 512).unwrap();
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let back = t.inverse(&t.forward(&b)).unwrap();
        for (a, c) in [(back.x_min, 0.0), (back.y_min, 0.0), (back.x_max, 1.0), (back.y_max, 1.0)] {
            assert!((a - c).abs() <= 1.0);
        }
    }

    #[test]
    fn degenerate_image_is_a_shape_error() {
        assert!(matches!(preprocess(&RgbImage::new(0, 5), &[], 512), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn inverse_recovers_native_boxes(w in 1u32..2000, h in 1u32..2000, fx in 0.0f64..1.0, fy in 0.0f64..1.0, fw in 0.0f64..1.0, fh in 0.0f64..1.0) {
            let x0 = (fx * (w - 1) as f64).floor();
            let y0 = (fy * (h - 1) as f64).floor();
            let x1 = x0 + 1.0 + (fw * (w as f64 - x0 - 1.0)).floor();
            let y1 = y0 + 1.0 + (fh * (h as f64 - y0 - 1.0)).floor();
            let b = BoundingBox::new(x0, y0, x1, y1).unwrap();
            let t = ResizeTransform::new(w, h, 512).unwrap();
            let back = t.inverse(&t.forward(&b)).unwrap();
            prop_assert!((back.x_min - x0).abs() <= 1.0 && (back.y_min - y0).abs() <= 1.0);
            prop_assert!((back.x_max - x1).abs() <= 1.0 && (back.y_max - y1).abs() <= 1.0);
        }
    }
}
