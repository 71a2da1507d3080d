//! Procedural two-domain scenes with exact boxes, for desk-scale runs.
//!
//! Domain A ("pseudo-WLI") is a smooth reddish texture with brighter
//! elliptical blobs; domain B ("pseudo-NBI") is the same content with the
//! channels rotated (R <- B, G <- R, B <- G) and dark vessel-like curves
//! drawn in. Boxes are identical across domains.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::save_png;
use crate::manifest::save_manifest;
use crate::ingest::split_dataset;
use crate::types::{Annotation, BoundingBox, DatasetManifest, ImageRecord, Modality, PolypClass, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Square image side in pixels.
    pub size: u32,
    pub n_clips: usize,
    pub frames_per_clip: usize,
    pub min_targets: usize,
    pub max_targets: usize,
    pub seed: u64,
    /// Fraction of frames (per clip) showing no target at all.
    pub empty_fraction: f64,
    /// Clip-level split fractions applied identically to both domains;
    /// empty leaves records unassigned.
    pub splits: BTreeMap<Split, f64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            size: 64,
            n_clips: 4,
            frames_per_clip: 10,
            min_targets: 1,
            max_targets: 2,
            seed: 0,
            empty_fraction: 0.0,
            splits: BTreeMap::new(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 || self.n_clips == 0 || self.frames_per_clip == 0 || self.min_targets == 0 {
            return Err(Error::InvalidArgument(
                "synthetic size must be >= 16 and all counts >= 1".into(),
            ));
        }
        if self.max_targets < self.min_targets {
            return Err(Error::InvalidArgument("max_targets < min_targets".into()));
        }
        if !(0.0..1.0).contains(&self.empty_fraction) {
            return Err(Error::InvalidArgument("empty_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// Domain A records, modality WLI.
    pub domain_a: DatasetManifest,
    /// Domain B records, modality NBI.
    pub domain_b: DatasetManifest,
}

impl SynthDataset {
    /// Both domains in one manifest, ready for semi-pairing.
    pub fn combined(&self, name: &str) -> Result<DatasetManifest> {
        let records = self
            .domain_a
            .records()
            .iter()
            .chain(self.domain_b.records())
            .cloned()
            .collect();
        let splits = self
            .domain_a
            .split_assignment()
            .iter()
            .chain(self.domain_b.split_assignment())
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        DatasetManifest::with_class_labels(name, true, records, splits)
    }
}

#[derive(Debug, Clone)]
struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
    tint: [f64; 3],
}

impl Blob {
    fn inside(&self, x: f64, y: f64, dx: f64, dy: f64) -> Option<f64> {
        let (px, py) = (x + 0.5 - (self.cx + dx), y + 0.5 - (self.cy + dy));
        let (s, c) = self.angle.sin_cos();
        let u = (c * px + s * py) / self.rx;
        let v = (-s * px + c * py) / self.ry;
        let r2 = u * u + v * v;
        (r2 <= 1.0).then_some(r2)
    }
}

#[derive(Debug, Clone)]
struct Clip {
    waves: Vec<(f64, f64, f64, f64)>,
    blobs: Vec<Blob>,
    vessels: Vec<(f64, f64, f64, f64)>,
    class: PolypClass,
}

fn make_clip(spec: &SynthSpec, index: usize, rng: &mut ChaCha8Rng) -> Clip {
    let s = spec.size as f64;
    let waves = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..TAU);
            let freq = rng.random_range(1.0..3.0) * TAU / s;
            (freq * theta.cos(), freq * theta.sin(), rng.random_range(0.0..TAU), rng.random_range(4.0..10.0))
        })
        .collect();
    let n = rng.random_range(spec.min_targets..=spec.max_targets);
    let mut blobs: Vec<Blob> = Vec::new();
    let mut attempts = 0;
    while blobs.len() < n && attempts < 200 {
        attempts += 1;
        let r = rng.random_range(0.09 * s..0.16 * s);
        let b = Blob {
            cx: rng.random_range(0.25 * s..0.75 * s),
            cy: rng.random_range(0.25 * s..0.75 * s),
            rx: r * rng.random_range(0.8..1.2),
            ry: r * rng.random_range(0.8..1.2),
            angle: rng.random_range(0.0..TAU),
            tint: [rng.random_range(35.0..55.0), rng.random_range(25.0..40.0), rng.random_range(20.0..35.0)],
        };
        let clear = blobs.iter().all(|o| {
            let d = ((o.cx - b.cx).powi(2) + (o.cy - b.cy).powi(2)).sqrt();
            d > 1.3 * (o.rx.max(o.ry) + b.rx.max(b.ry))
        });
        if clear {
            blobs.push(b);
        }
    }
    let vessels = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..s),
                rng.random_range(2.0..0.15 * s),
                rng.random_range(1.0..3.0) * TAU / s,
                rng.random_range(0.0..TAU),
            )
        })
        .collect();
    let class = if index % 2 == 0 {
        PolypClass::Hyperplastic
    } else {
        PolypClass::Adenoma
    };
    Clip {
        waves,
        blobs,
        vessels,
        class,
    }
}

/// Renders one domain-A frame; returns the image and the tight box of every
/// blob that covers at least one pixel.
fn render(spec: &SynthSpec, clip: &Clip, dx: f64, dy: f64, show: bool, rng: &mut ChaCha8Rng) -> (RgbImage, Vec<BoundingBox>) {
    let n = spec.size;
    let mut bounds: Vec<Option<(u32, u32, u32, u32)>> = vec![None; clip.blobs.len()];
    let mut img = RgbImage::new(n, n);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 + dx, y as f64 + dy);
            let tex: f64 = clip.waves.iter().map(|(kx, ky, ph, a)| a * (kx * fx + ky * fy + ph).sin()).sum();
            let noise = rng.random_range(-3.0..3.0);
            let mut rgb = [170.0 + tex + noise, 85.0 + 0.6 * tex + noise, 70.0 + 0.4 * tex + noise];
            if show {
                for (bi, b) in clip.blobs.iter().enumerate() {
                    if let Some(r2) = b.inside(x as f64, y as f64, dx, dy) {
                        let shade = 1.0 - 0.4 * r2;
                        for c in 0..3 {
                            rgb[c] += b.tint[c] * shade + 10.0;
                        }
                        let e = bounds[bi].get_or_insert((x, y, x, y));
                        e.0 = e.0.min(x);
                        e.1 = e.1.min(y);
                        e.2 = e.2.max(x);
                        e.3 = e.3.max(y);
                    }
                }
            }
            img.put_pixel(x, y, image::Rgb(rgb.map(|v| v.round().clamp(0.0, 255.0) as u8)));
        }
    }
    let boxes = bounds
        .into_iter()
        .flatten()
        .map(|(x0, y0, x1, y1)| BoundingBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64).expect("valid box"))
        .collect();
    (img, boxes)
}

/// Domain-B version of a domain-A frame: channel rotation plus vessel
/// curves that darken the pixels they cross.
fn to_domain_b(a: &RgbImage, clip: &Clip, dx: f64, dy: f64) -> RgbImage {
    RgbImage::from_fn(a.width(), a.height(), |x, y| {
        let p = a.get_pixel(x, y).0;
        let mut out = [p[2] as f64, p[0] as f64, p[1] as f64];
        let (fx, fy) = (x as f64 + dx, y as f64 + dy);
        let on_vessel = clip
            .vessels
            .iter()
            .any(|(y0, amp, k, ph)| (fy - (y0 + amp * (k * fx + ph).sin())).abs() < 0.8);
        if on_vessel {
            out = out.map(|v| v * 0.7);
        }
        image::Rgb(out.map(|v| v.round().clamp(0.0, 255.0) as u8))
    })
}

pub fn frame_id(domain: Modality, clip: &str, frame: usize) -> String {
    format!("{}_{clip}_f{frame:06}", domain.as_str().to_ascii_lowercase())
}

/// Generates both domains under `out_dir` (`a/` and `b/` image trees plus
/// `domain_a.jsonl`, `domain_b.jsonl` and `combined.jsonl` manifests; record
/// paths are relative to `out_dir`).
pub fn make_synthetic_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut recs_a, mut recs_b) = (Vec::new(), Vec::new());
    for c in 0..spec.n_clips {
        let clip_id = format!("clip{c:03}");
        let clip = make_clip(spec, c, &mut rng);
        let (mut dx, mut dy) = (0.0, 0.0);
        for f in 0..spec.frames_per_clip {
            dx += rng.random_range(-0.8..0.8);
            dy += rng.random_range(-0.8..0.8);
            let show = !rng.random_bool(spec.empty_fraction);
            let (a, boxes) = render(spec, &clip, dx, dy, show, &mut rng);
            let b = to_domain_b(&a, &clip, dx, dy);
            let annotations: Vec<Annotation> = boxes
                .into_iter()
                .map(|bbox| Annotation { bbox, class: clip.class })
                .collect();
            for (modality, img, dir, recs) in [
                (Modality::Wli, &a, "a", &mut recs_a),
                (Modality::Nbi, &b, "b", &mut recs_b),
            ] {
                let id = frame_id(modality, &clip_id, f);
                let path = PathBuf::from(dir).join(&clip_id).join(format!("{id}.png"));
                save_png(img, &out_dir.join(&path))?;
                recs.push(ImageRecord {
                    id,
                    path,
                    modality,
                    clip_id: clip_id.clone(),
                    width: spec.size,
                    height: spec.size,
                    annotations: annotations.clone(),
                    source_id: None,
                });
            }
        }
    }
    let assign = |m: DatasetManifest| {
        if spec.splits.is_empty() {
            Ok(m)
        } else {
            split_dataset(&m, &spec.splits, spec.seed)
        }
    };
    let ds = SynthDataset {
        domain_a: assign(DatasetManifest::with_class_labels("synthetic-a", true, recs_a, BTreeMap::new())?)?,
        domain_b: assign(DatasetManifest::with_class_labels("synthetic-b", true, recs_b, BTreeMap::new())?)?,
    };
    save_manifest(&ds.domain_a, out_dir.join("domain_a.jsonl"))?;
    save_manifest(&ds.domain_b, out_dir.join("domain_b.jsonl"))?;
    save_manifest(&ds.combined("synthetic")?, out_dir.join("combined.jsonl"))?;
    Ok(ds)
}
