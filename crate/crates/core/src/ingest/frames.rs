use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use image::codecs::gif::{GifDecoder, GifEncoder, Repeat};
use image::{AnimationDecoder, Delay, Frame, RgbImage};

use crate::error::{Error, Result};
use crate::imaging::{load_rgb, save_png};
use crate::types::{ImageRecord, Modality};

/// Decodes every frame of a video: an animated GIF, or a directory of still
/// frames read in file-name order.
pub fn decode_video(path: &Path) -> Result<Vec<RgbImage>> {
    let frames = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        files.iter().map(|f| load_rgb(f)).collect::<Result<Vec<_>>>()?
    } else {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let decode_err = |e: image::ImageError| Error::Decode {
            path: path.to_path_buf(),
            msg: e.to_string(),
        };
        let decoder = GifDecoder::new(BufReader::new(file)).map_err(decode_err)?;
        decoder
            .into_frames()
            .map(|f| {
                f.map(|f| image::DynamicImage::ImageRgba8(f.into_buffer()).to_rgb8())
                    .map_err(decode_err)
            })
            .collect::<Result<Vec<_>>>()?
    };
    if frames.is_empty() {
        return Err(Error::EmptyInput(format!("video {} has no frames", path.display())));
    }
    Ok(frames)
}

/// Writes frames as an animated GIF.
pub fn encode_gif(frames: &[RgbImage], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = GifEncoder::new_with_speed(file, 10);
    enc.set_repeat(Repeat::Infinite)
        .map_err(|e| Error::image(path, e))?;
    let frames = frames.iter().map(|f| {
        let rgba = image::DynamicImage::ImageRgb8(f.clone()).to_rgba8();
        Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(40, 1))
    });
    enc.encode_frames(frames).map_err(|e| Error::image(path, e))
}

/// Record id of frame `index` of clip `clip_id`.
pub fn frame_id(clip_id: &str, index: usize) -> String {
    format!("{clip_id}_f{index:06}")
}

/// Frame index encoded in an id produced by [`frame_id`].
pub fn parse_frame_index(id: &str) -> Option<usize> {
    let (_, tail) = id.rsplit_once("_f")?;
    let digits: String = tail.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        None
    } else {
        digits.parse().ok()
    }
}

/// Keeps every `stride`-th frame of `video` starting at frame 0, writes each
/// as PNG under `out_dir`, and returns one record per kept frame. The clip id
/// is the video's file stem.
pub fn extract_frames(
    video: &Path,
    stride: usize,
    modality: Modality,
    out_dir: &Path,
) -> Result<Vec<ImageRecord>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let clip_id = video
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad video name {}", video.display())))?
        .to_string();
    let frames = decode_video(video)?;
    let mut records = Vec::with_capacity(frames.len().div_ceil(stride));
    for (index, frame) in frames.iter().enumerate().step_by(stride) {
        let id = frame_id(&clip_id, index);
        let path = out_dir.join(format!("{id}.png"));
        save_png(frame, &path)?;
        records.push(ImageRecord {
            id,
            path,
            modality,
            clip_id: clip_id.clone(),
            width: frame.width(),
            height: frame.height(),
            annotations: Vec::new(),
            source_id: None,
        });
    }
    Ok(records)
}
