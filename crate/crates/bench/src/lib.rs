//! Deterministic inputs shared by the benchmarks.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snbi_core::{BoundingBox, Detection, PolypClass};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(rng: &mut impl Rng, size: f64) -> BoundingBox {
    let x = rng.random_range(0.0..size * 0.8);
    let y = rng.random_range(0.0..size * 0.8);
    let w = rng.random_range(4.0..size * 0.2);
    let h = rng.random_range(4.0..size * 0.2);
    BoundingBox::new(x, y, x + w, y + h).expect("positive extent")
}

/// `n_images` scenes of `dets` detections and `gts` ground-truth boxes.
pub fn scenes(n_images: usize, dets: usize, gts: usize, seed: u64) -> (Vec<Vec<Detection>>, Vec<Vec<BoundingBox>>) {
    let mut r = rng(seed);
    (0..n_images)
        .map(|_| {
            let g: Vec<BoundingBox> = (0..gts).map(|_| random_box(&mut r, 512.0)).collect();
            let d = (0..dets)
                .map(|_| {
                    let b = random_box(&mut r, 512.0);
                    Detection::new(b, r.random_range(0.0..1.0), PolypClass::Unknown).expect("valid detection")
                })
                .collect();
            (d, g)
        })
        .unzip()
}

pub fn noise_image(size: u32, seed: u64) -> RgbImage {
    let mut r = rng(seed);
    RgbImage::from_fn(size, size, |_, _| image::Rgb([r.random(), r.random(), r.random()]))
}
