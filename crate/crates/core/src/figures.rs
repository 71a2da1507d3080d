//! Qualitative panels: WLI / NBI / SNBI triptychs and detection overlays.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use log::warn;

use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::imaging::{load_rgb, resize, save_png};
use crate::ingest::parse_frame_index;
use crate::translator::Translator;
use crate::types::{BoundingBox, DatasetManifest, Detection, ImageRecord, Modality};

pub const GT_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const PRED_COLOR: Rgb<u8> = Rgb([255, 0, 255]);
const PLACEHOLDER: Rgb<u8> = Rgb([96, 96, 96]);
const GAP: u32 = 4;

/// 3x5 glyphs for the characters of a confidence label, one row per entry,
/// most significant bit leftmost.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        _ => [0; 5],
    }
}

/// Confidence label as printed on overlays.
pub fn confidence_label(confidence: f64) -> String {
    format!("{confidence:.2}")
}

/// Draws `text` with its top-left corner at `(x, y)`, each font pixel a
/// `scale`-sized square, on a dark backing for legibility. Clipped to the image.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: u32, color: Rgb<u8>) {
    let s = scale as i64;
    let w = text.chars().count() as i64 * 4 * s + s;
    fill_rect(img, x, y, w, 7 * s, Rgb([0, 0, 0]));
    for (i, c) in text.chars().enumerate() {
        let ox = x + s + i as i64 * 4 * s;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    fill_rect(img, ox + col * s, y + s + row as i64 * s, s, s, color);
                }
            }
        }
    }
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, color: Rgb<u8>) {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    for yy in y.max(0)..(y + h).min(ih) {
        for xx in x.max(0)..(x + w).min(iw) {
            img.put_pixel(xx as u32, yy as u32, color);
        }
    }
}

/// Outlines `b` (pixel-edge coordinates) with a `thickness`-pixel border
/// drawn inside the box.
pub fn draw_box(img: &mut RgbImage, b: &BoundingBox, thickness: u32, color: Rgb<u8>) {
    let (x0, y0) = (b.x_min.round() as i64, b.y_min.round() as i64);
    let (x1, y1) = (b.x_max.round() as i64, b.y_max.round() as i64);
    let t = thickness as i64;
    fill_rect(img, x0, y0, x1 - x0, t, color);
    fill_rect(img, x0, y1 - t, x1 - x0, t, color);
    fill_rect(img, x0, y0, t, y1 - y0, color);
    fill_rect(img, x1 - t, y0, t, y1 - y0, color);
}

/// Grey panel crossed by both diagonals, standing in for a missing modality.
pub fn placeholder(width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, PLACEHOLDER);
    let n = width.max(height);
    for i in 0..n {
        let x = (i as u64 * width as u64 / n as u64) as u32;
        let y = (i as u64 * height as u64 / n as u64) as u32;
        img.put_pixel(x, y, Rgb([200, 200, 200]));
        img.put_pixel(width - 1 - x, y, Rgb([200, 200, 200]));
    }
    img
}

/// Concatenates panels left to right, each resized to the first panel's size.
pub fn hstack(panels: &[RgbImage]) -> RgbImage {
    let (w, h) = panels[0].dimensions();
    let n = panels.len() as u32;
    let mut out = RgbImage::from_pixel(n * w + (n - 1) * GAP, h, Rgb([255, 255, 255]));
    for (i, p) in panels.iter().enumerate() {
        let p = if p.dimensions() == (w, h) { p.clone() } else { resize(p, w, h) };
        image::imageops::replace(&mut out, &p, (i as u32 * (w + GAP)) as i64, 0);
    }
    out
}

/// Overlays ground truth and detections on `img`. Each detection carries its
/// confidence to two decimals above its top-left corner.
pub fn overlay(img: &RgbImage, gt: &[BoundingBox], detections: &[Detection]) -> RgbImage {
    let mut out = img.clone();
    let thick = (img.width().min(img.height()) / 128).max(1);
    let scale = (img.width().min(img.height()) / 96).max(1);
    for b in gt {
        draw_box(&mut out, b, thick, GT_COLOR);
    }
    for d in detections {
        draw_box(&mut out, &d.bbox, thick, PRED_COLOR);
        let y = (d.bbox.y_min.round() as i64 - 7 * scale as i64).max(0);
        draw_text(&mut out, d.bbox.x_min.round() as i64, y, &confidence_label(d.confidence), scale, PRED_COLOR);
    }
    out
}

/// NBI record showing the same scene as `wli`: same clip and frame index if
/// present, otherwise the clip's NBI frame with the nearest index.
pub fn nbi_partner<'a>(manifest: &'a DatasetManifest, wli: &ImageRecord) -> Option<&'a ImageRecord> {
    let idx = parse_frame_index(&wli.id);
    manifest
        .records()
        .iter()
        .filter(|r| r.modality == Modality::Nbi && r.clip_id == wli.clip_id)
        .min_by_key(|r| match (idx, parse_frame_index(&r.id)) {
            (Some(a), Some(b)) => a.abs_diff(b),
            _ => usize::MAX,
        })
}

#[derive(Debug, Default)]
pub struct FigureOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Writes `triptych_<id>.png` (WLI, NBI, SNBI) for a WLI record. A missing
/// NBI partner or translator yields a placeholder panel and a warning.
pub fn export_triptych(
    manifest: &DatasetManifest,
    base_dir: &Path,
    id: &str,
    translator: Option<&Translator>,
    out_dir: &Path,
    out: &mut FigureOutput,
) -> Result<()> {
    let rec = manifest
        .get(id)
        .ok_or_else(|| Error::InvalidArgument(format!("id `{id}` not in manifest {}", manifest.name())))?;
    if rec.modality != Modality::Wli {
        return Err(Error::Modality {
            id: id.into(),
            expected: Modality::Wli.to_string(),
            got: rec.modality.to_string(),
        });
    }
    let wli = load_rgb(&base_dir.join(&rec.path))?;
    let (w, h) = wli.dimensions();
    let nbi = match nbi_partner(manifest, rec) {
        Some(p) => load_rgb(&base_dir.join(&p.path))?,
        None => {
            let msg = format!("{id}: no NBI frame in clip {}; placeholder panel", rec.clip_id);
            warn!("{msg}");
            out.warnings.push(msg);
            placeholder(w, h)
        }
    };
    let snbi = match translator {
        Some(t) => t.translate_image(&wli)?,
        None => {
            let msg = format!("{id}: no translator; placeholder SNBI panel");
            warn!("{msg}");
            out.warnings.push(msg);
            placeholder(w, h)
        }
    };
    let path = out_dir.join(format!("triptych_{id}.png"));
    save_png(&hstack(&[wli, nbi, snbi]), &path)?;
    out.files.push(path);
    Ok(())
}

/// Writes `overlay_<model>_<id>.png`: the record with its ground truth and
/// the model's detections at or above `threshold`.
pub fn export_overlay(
    record: &ImageRecord,
    base_dir: &Path,
    model_name: &str,
    detector: &dyn Detector,
    threshold: f64,
    out_dir: &Path,
    out: &mut FigureOutput,
) -> Result<()> {
    let img = load_rgb(&base_dir.join(&record.path))?;
    let dets: Vec<Detection> = detector
        .detect(&img)?
        .into_iter()
        .filter(|d| d.confidence >= threshold)
        .collect();
    let path = out_dir.join(format!("overlay_{model_name}_{}.png", record.id));
    save_png(&overlay(&img, &record.boxes(), &dets), &path)?;
    out.files.push(path);
    Ok(())
}

/// Triptychs for the WLI ids and overlays of every id under every detector.
pub fn export_figures(
    manifest: &DatasetManifest,
    base_dir: &Path,
    translator: Option<&Translator>,
    detectors: &[(String, &dyn Detector)],
    threshold: f64,
    ids: &[String],
    out_dir: &Path,
) -> Result<FigureOutput> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = FigureOutput::default();
    for id in ids {
        let rec = manifest
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("id `{id}` not in manifest {}", manifest.name())))?;
        if rec.modality == Modality::Wli {
            export_triptych(manifest, base_dir, id, translator, out_dir, &mut out)?;
        }
        for (name, det) in detectors {
            export_overlay(rec, base_dir, name, *det, threshold, out_dir, &mut out)?;
        }
    }
    Ok(out)
}
