//! Predictions file: one JSON object per detection with the image id, box
//! corners, confidence and class. An image with no detections may appear as
//! a line with `"box": null`, so that every evaluated image is listed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{parse_line, read_lines, LineWriter};
use crate::types::{BoundingBox, Detection, PolypClass};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    image_id: String,
    #[serde(rename = "box")]
    bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<PolypClass>,
}

pub fn write_predictions(path: &Path, predictions: &BTreeMap<String, Vec<Detection>>) -> Result<()> {
    let mut out = LineWriter::create(path)?;
    for (id, dets) in predictions {
        if dets.is_empty() {
            out.write(&PredictionLine {
                image_id: id.clone(),
                bbox: None,
                confidence: None,
                class: None,
            })?;
        }
        for d in dets {
            let b = d.bbox;
            out.write(&PredictionLine {
                image_id: id.clone(),
                bbox: Some([b.x_min, b.y_min, b.x_max, b.y_max]),
                confidence: Some(d.confidence),
                class: Some(d.class),
            })?;
        }
    }
    out.finish()
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (line_no, text) in read_lines(path)? {
        let line: PredictionLine = parse_line(path, line_no, &text)?;
        let entry = out.entry(line.image_id).or_default();
        let Some([x0, y0, x1, y1]) = line.bbox else {
            continue;
        };
        let format_err = |msg: String| Error::Format {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let bbox = BoundingBox::new(x0, y0, x1, y1).map_err(|e| format_err(e.to_string()))?;
        let confidence = line
            .confidence
            .ok_or_else(|| format_err("detection without confidence".into()))?;
        let det = Detection::new(bbox, confidence, line.class.unwrap_or(PolypClass::Unknown))
            .map_err(|e| format_err(e.to_string()))?;
        entry.push(det);
    }
    Ok(out)
}
