//! Manifest file format.
//!
//! The first line is a header object carrying the dataset name and split
//! assignment; every following line is one image record. Annotation boxes are
//! written as integer pixel corners `[x_min, y_min, x_max, y_max]`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{parse_line, read_lines, LineWriter};
use crate::types::{
    Annotation, BoundingBox, DatasetManifest, ImageRecord, Modality, PolypClass, Split,
};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    name: String,
    #[serde(default)]
    class_labeled: bool,
    split_assignment: BTreeMap<String, Split>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireAnnotation {
    #[serde(rename = "box")]
    bbox: [i64; 4],
    class: PolypClass,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    id: String,
    path: PathBuf,
    modality: Modality,
    clip_id: String,
    width: u32,
    height: u32,
    annotations: Vec<WireAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_id: Option<String>,
}

impl WireRecord {
    fn from_record(r: &ImageRecord) -> Result<Self> {
        let annotations = r
            .annotations
            .iter()
            .map(|a| {
                if !a.bbox.is_integral() {
                    return Err(Error::validation(
                        format!("record `{}`", r.id),
                        format!("annotation box {:?} is not on integer pixel corners", a.bbox),
                    ));
                }
                let b = a.bbox;
                Ok(WireAnnotation {
                    bbox: [b.x_min as i64, b.y_min as i64, b.x_max as i64, b.y_max as i64],
                    class: a.class,
                })
            })
            .collect::<Result<_>>()?;
        Ok(WireRecord {
            id: r.id.clone(),
            path: r.path.clone(),
            modality: r.modality,
            clip_id: r.clip_id.clone(),
            width: r.width,
            height: r.height,
            annotations,
            source_id: r.source_id.clone(),
        })
    }

    fn into_record(self) -> Result<ImageRecord> {
        let annotations = self
            .annotations
            .into_iter()
            .map(|a| {
                let [x0, y0, x1, y1] = a.bbox;
                let bbox = BoundingBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64)
                    .map_err(|e| Error::validation(format!("record `{}`", self.id), e.to_string()))?;
                Ok(Annotation {
                    bbox,
                    class: a.class,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ImageRecord {
            id: self.id,
            path: self.path,
            modality: self.modality,
            clip_id: self.clip_id,
            width: self.width,
            height: self.height,
            annotations,
            source_id: self.source_id,
        })
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    let Some(((header_line, header_text), rest)) = lines.split_first() else {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 1,
            msg: "missing header line".into(),
        });
    };
    let header: Header = parse_line(path, *header_line, header_text)?;
    let mut records = Vec::with_capacity(rest.len());
    for (line_no, text) in rest {
        let wire: WireRecord = parse_line(path, *line_no, text)?;
        records.push(wire.into_record()?);
    }
    DatasetManifest::with_class_labels(
        header.name,
        header.class_labeled,
        records,
        header.split_assignment,
    )
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let wire: Vec<WireRecord> = manifest
        .records()
        .iter()
        .map(WireRecord::from_record)
        .collect::<Result<_>>()?;
    let mut out = LineWriter::create(path)?;
    out.write(&Header {
        name: manifest.name().to_string(),
        class_labeled: manifest.class_labeled(),
        split_assignment: manifest.split_assignment().clone(),
    })?;
    for r in &wire {
        out.write(r)?;
    }
    out.finish()
}

/// Resolves a record path against the directory holding its manifest.
pub fn resolve_path(manifest_path: &Path, record_path: &Path) -> PathBuf {
    if record_path.is_absolute() {
        record_path.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(record_path)
    }
}
