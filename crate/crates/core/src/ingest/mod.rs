//! Raw videos, stills, masks and box files to validated manifests.

pub mod blur;
pub mod crop;
pub mod frames;
pub mod mask;
pub mod split;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::GrayImage;
use log::warn;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::imaging::{load_rgb, save_png};
use crate::types::{Annotation, BoundingBox, DatasetManifest, ImageRecord, Modality, PolypClass};

pub use blur::{auto_threshold, blur_score, filter_blurry, BlurFilterOutcome, BlurScore};
pub use crop::{crop_black_borders, CropOutcome, CropRegion, CropWarning};
pub use frames::{decode_video, encode_gif, extract_frames, frame_id, parse_frame_index};
pub use mask::{binarize, mask_to_bboxes};
pub use split::split_dataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlurThreshold {
    Fixed(f64),
    /// Chosen from the score distribution with [`auto_threshold`].
    Auto,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub modality: Modality,
    pub blur: Option<BlurThreshold>,
    /// `(intensity_threshold, min_fraction)` for border cropping.
    pub crop: Option<(f64, f64)>,
    pub min_mask_area: usize,
    /// Grey level at which masks are binarized.
    pub mask_level: u8,
    /// Polyp class per clip id; clips not listed get `unknown`.
    pub clip_classes: BTreeMap<String, PolypClass>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            modality: Modality::Wli,
            blur: None,
            crop: None,
            min_mask_area: mask::DEFAULT_MIN_AREA,
            mask_level: 128,
            clip_classes: BTreeMap::new(),
        }
    }
}

#[derive(Debug)]
pub struct IngestReport {
    pub manifest: DatasetManifest,
    pub blurry: Vec<String>,
    pub unreadable: Vec<(String, String)>,
    pub crop_warnings: Vec<(String, CropWarning)>,
}

/// Corner layout of boxes in a still-image box file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxFormat {
    /// `x_min, y_min, x_max, y_max`
    Corners,
    /// `x, y, width, height`
    Xywh,
}

impl std::str::FromStr for BoxFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corners" | "xyxy" => Ok(BoxFormat::Corners),
            "xywh" => Ok(BoxFormat::Xywh),
            other => Err(Error::InvalidArgument(format!("unknown box format `{other}`"))),
        }
    }
}

#[derive(Debug, Deserialize)]
struct BoxRow {
    image: String,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    #[serde(default)]
    class: Option<String>,
}

/// Reads `image,a,b,c,d[,class]` rows (with a header line) keyed by image
/// file stem. `format` says how to read `a..d`.
pub fn read_box_file(path: &Path, format: BoxFormat) -> Result<BTreeMap<String, Vec<Annotation>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    // Columns are positional; the header names are free-form.
    let names = csv::StringRecord::from(vec!["image", "a", "b", "c", "d", "class"]);
    let mut out: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let fmt_err = |msg: String| Error::Format {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let row: BoxRow = rec
            .and_then(|r| r.deserialize(Some(&names)))
            .map_err(|e| fmt_err(e.to_string()))?;
        let bbox = match format {
            BoxFormat::Corners => BoundingBox::new(row.a, row.b, row.c, row.d),
            BoxFormat::Xywh => BoundingBox::from_xywh(row.a, row.b, row.c, row.d),
        }
        .map_err(|e| fmt_err(e.to_string()))?;
        let class = match row.class.as_deref() {
            Some(c) => c.parse().map_err(|e: Error| fmt_err(e.to_string()))?,
            None => PolypClass::Unknown,
        };
        let stem = Path::new(&row.image)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&row.image)
            .to_string();
        out.entry(stem).or_default().push(Annotation { bbox, class });
    }
    Ok(out)
}

fn load_mask(path: &Path, level: u8) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
    Ok(binarize(&img, level))
}

/// Per-frame masks of one clip: `<masks>/<clip>/<frame index>.png` files or
/// an animated `<masks>/<clip>.gif` with one mask per frame.
fn clip_masks(masks_dir: &Path, clip: &str, level: u8) -> Result<BTreeMap<usize, GrayImage>> {
    let mut out = BTreeMap::new();
    let dir = masks_dir.join(clip);
    let gif = masks_dir.join(format!("{clip}.gif"));
    if dir.is_dir() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            let Some(index) = p
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().ok())
            else {
                continue;
            };
            out.insert(index, load_mask(&p, level)?);
        }
    } else if gif.is_file() {
        for (i, frame) in decode_video(&gif)?.iter().enumerate() {
            let g = image::DynamicImage::ImageRgb8(frame.clone()).to_luma8();
            out.insert(i, binarize(&g, level));
        }
    }
    Ok(out)
}

/// Mask whose frame index is nearest to `index`; ties go to the earlier one.
fn nearest_mask(masks: &BTreeMap<usize, GrayImage>, index: usize) -> Option<&GrayImage> {
    let before = masks.range(..=index).next_back();
    let after = masks.range(index..).next();
    match (before, after) {
        (Some((bi, bm)), Some((ai, am))) => Some(if index - bi <= ai - index { bm } else { am }),
        (Some((_, m)), None) | (None, Some((_, m))) => Some(m),
        (None, None) => None,
    }
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

/// Crops and blur-filters records whose images live under `out_dir`.
fn finish(
    name: &str,
    mut records: Vec<ImageRecord>,
    opts: &IngestOptions,
    out_dir: &Path,
) -> Result<IngestReport> {
    let mut crop_warnings = Vec::new();
    if let Some((intensity, min_fraction)) = opts.crop {
        for r in &mut records {
            let path = out_dir.join(&r.path);
            let img = load_rgb(&path)?;
            let out = crop_black_borders(&img, intensity, min_fraction)?;
            if let Some(w) = out.warning {
                warn!("crop of {}: {w:?}", r.id);
                crop_warnings.push((r.id.clone(), w));
            }
            if out.region != CropRegion::full(r.width, r.height) {
                save_png(&out.image, &path)?;
                (r.width, r.height) = out.image.dimensions();
                r.annotations = r
                    .annotations
                    .iter()
                    .filter_map(|a| {
                        out.region.map_box(&a.bbox).map(|bbox| Annotation { bbox, class: a.class })
                    })
                    .collect();
            }
        }
    }
    let mut blurry = Vec::new();
    let mut unreadable = Vec::new();
    if let Some(mode) = opts.blur {
        let threshold = match mode {
            BlurThreshold::Fixed(t) => t,
            BlurThreshold::Auto => {
                let scores = records
                    .iter()
                    .map(|r| load_rgb(&out_dir.join(&r.path)).and_then(|i| blur_score(&i)))
                    .collect::<Result<Vec<_>>>()?;
                auto_threshold(&scores)
            }
        };
        let outcome = filter_blurry(records, threshold, out_dir)?;
        blurry = outcome.dropped.into_iter().map(|r| r.id).collect();
        unreadable = outcome
            .failed
            .into_iter()
            .map(|(r, e)| (r.id, e.to_string()))
            .collect();
        records = outcome.kept;
    }
    let manifest = DatasetManifest::new(name, records, BTreeMap::new())?;
    Ok(IngestReport {
        manifest,
        blurry,
        unreadable,
        crop_warnings,
    })
}

/// Extracts frames of every video in `videos_dir` (sorted by name), attaches
/// boxes from per-frame masks, then crops and blur-filters as configured.
/// Images are written under `out_dir/frames`, and record paths are relative
/// to `out_dir`.
pub fn ingest_videos(
    name: &str,
    videos_dir: &Path,
    masks_dir: Option<&Path>,
    stride: usize,
    opts: &IngestOptions,
    out_dir: &Path,
) -> Result<IngestReport> {
    let mut videos: Vec<PathBuf> = std::fs::read_dir(videos_dir)
        .map_err(|e| Error::io(videos_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() || p.extension().is_some_and(|e| e.eq_ignore_ascii_case("gif")))
        .collect();
    videos.sort();
    if videos.is_empty() {
        return Err(Error::EmptyInput(format!("no videos in {}", videos_dir.display())));
    }
    let mut records = Vec::new();
    for video in &videos {
        let clip = video.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let frames_dir = out_dir.join("frames").join(&clip);
        let mut recs = extract_frames(video, stride, opts.modality, &frames_dir)?;
        let masks = match masks_dir {
            Some(dir) => clip_masks(dir, &clip, opts.mask_level)?,
            None => BTreeMap::new(),
        };
        let class = opts.clip_classes.get(&clip).copied().unwrap_or(PolypClass::Unknown);
        for r in &mut recs {
            r.path = relative_to(&r.path, out_dir);
            let index = parse_frame_index(&r.id).unwrap_or(0);
            if let Some(m) = nearest_mask(&masks, index) {
                let m = if m.dimensions() == (r.width, r.height) {
                    m.clone()
                } else {
                    let resized = image::imageops::resize(m, r.width, r.height, image::imageops::FilterType::Nearest);
                    binarize(&resized, opts.mask_level)
                };
                r.annotations = mask_to_bboxes(&m, opts.min_mask_area)?
                    .into_iter()
                    .map(|bbox| Annotation { bbox, class })
                    .collect();
            }
        }
        records.extend(recs);
    }
    finish(name, records, opts, out_dir)
}

/// Still images: every image file in `images_dir` becomes one record whose
/// clip id is its file stem. Boxes come from a box file or from masks named
/// like the image.
pub fn ingest_stills(
    name: &str,
    images_dir: &Path,
    boxes: Option<(&Path, BoxFormat)>,
    masks_dir: Option<&Path>,
    opts: &IngestOptions,
    out_dir: &Path,
) -> Result<IngestReport> {
    let box_map = match boxes {
        Some((p, f)) => read_box_file(p, f)?,
        None => BTreeMap::new(),
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(images_dir)
        .map_err(|e| Error::io(images_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut records = Vec::new();
    for file in &files {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let img = load_rgb(file)?;
        let rel = PathBuf::from("images").join(format!("{stem}.png"));
        save_png(&img, &out_dir.join(&rel))?;
        let class = opts.clip_classes.get(&stem).copied().unwrap_or(PolypClass::Unknown);
        let mut annotations = box_map.get(&stem).cloned().unwrap_or_default();
        if let Some(dir) = masks_dir {
            let mask_path = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .find(|p| p.file_stem().and_then(|s| s.to_str()) == Some(stem.as_str()));
            if let Some(mp) = mask_path {
                let m = load_mask(&mp, opts.mask_level)?;
                annotations.extend(
                    mask_to_bboxes(&m, opts.min_mask_area)?
                        .into_iter()
                        .map(|bbox| Annotation { bbox, class }),
                );
            }
        }
        records.push(ImageRecord {
            id: stem.clone(),
            path: rel,
            modality: opts.modality,
            clip_id: stem,
            width: img.width(),
            height: img.height(),
            annotations,
            source_id: None,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("no images in {}", images_dir.display())));
    }
    finish(name, records, opts, out_dir)
}
