//! Domain types shared by every stage of the pipeline.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Imaging modality of a frame.
///
/// `Wli` is the source domain of the translator and `Nbi` the target domain.
/// `Snbi` marks images produced by translating a WLI image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "WLI")]
    Wli,
    #[serde(rename = "NBI")]
    Nbi,
    #[serde(rename = "SNBI")]
    Snbi,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Wli => "WLI",
            Modality::Nbi => "NBI",
            Modality::Snbi => "SNBI",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "WLI" => Ok(Modality::Wli),
            "NBI" => Ok(Modality::Nbi),
            "SNBI" => Ok(Modality::Snbi),
            other => Err(Error::InvalidArgument(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolypClass {
    Hyperplastic,
    Adenoma,
    Unknown,
}

impl PolypClass {
    /// Classes a detector can be trained to emit.
    pub const LABELED: [PolypClass; 2] = [PolypClass::Hyperplastic, PolypClass::Adenoma];

    pub fn as_str(self) -> &'static str {
        match self {
            PolypClass::Hyperplastic => "hyperplastic",
            PolypClass::Adenoma => "adenoma",
            PolypClass::Unknown => "unknown",
        }
    }
}

impl fmt::Display for PolypClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolypClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hyperplastic" => Ok(PolypClass::Hyperplastic),
            "adenoma" | "adenomatous" => Ok(PolypClass::Adenoma),
            "unknown" | "" => Ok(PolypClass::Unknown),
            other => Err(Error::InvalidArgument(format!("unknown polyp class `{other}`"))),
        }
    }
}

/// Axis-aligned box in corner form, native pixel coordinates.
///
/// Coordinates are pixel edges: a box covering pixel columns `5..=19` has
/// `x_min = 5`, `x_max = 20`, so `width() == 15` is the pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.check()?;
        Ok(b)
    }

    /// Builds a box from `(x, y, width, height)`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    fn check(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("box", format!("non-finite coordinate in {self:?}")));
        }
        if coords.iter().any(|&c| c < 0.0) {
            return Err(Error::validation("box", format!("negative coordinate in {self:?}")));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::validation("box", format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.check().is_ok() && self.x_max <= width as f64 && self.y_max <= height as f64
    }

    /// Clamps to `[0, width] x [0, height]`; `None` if nothing remains.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<Self> {
        let (w, h) = (width as f64, height as f64);
        let b = BoundingBox {
            x_min: self.x_min.clamp(0.0, w),
            y_min: self.y_min.clamp(0.0, h),
            x_max: self.x_max.clamp(0.0, w),
            y_max: self.y_max.clamp(0.0, h),
        };
        b.check().ok().map(|_| b)
    }

    /// Moves the box by `(-dx, -dy)`, e.g. into a crop's coordinate frame.
    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        BoundingBox {
            x_min: self.x_min - dx,
            y_min: self.y_min - dy,
            x_max: self.x_max - dx,
            y_max: self.y_max - dy,
        }
    }

    pub fn is_integral(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|c| c.fract() == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class: PolypClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub modality: Modality,
    pub clip_id: String,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<Annotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::validation(format!("record `{}`", self.id), msg));
        if self.id.is_empty() {
            return Err(Error::validation("record", "empty id"));
        }
        if self.width == 0 || self.height == 0 {
            return fail(format!("zero size {}x{}", self.width, self.height));
        }
        if self.clip_id.is_empty() {
            return fail("empty clip_id".into());
        }
        for a in &self.annotations {
            if !a.bbox.fits_within(self.width, self.height) {
                return fail(format!(
                    "box {:?} outside image {}x{}",
                    a.bbox, self.width, self.height
                ));
            }
        }
        match (self.modality, &self.source_id) {
            (Modality::Snbi, None) => fail("SNBI record without source_id".into()),
            (Modality::Wli | Modality::Nbi, Some(_)) => {
                fail("source_id is only valid on SNBI records".into())
            }
            _ => Ok(()),
        }
    }

    pub fn boxes(&self) -> Vec<BoundingBox> {
        self.annotations.iter().map(|a| a.bbox).collect()
    }
}

/// Scored detector output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub class: PolypClass,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64, class: PolypClass) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::validation(
                "detection",
                format!("confidence {confidence} outside [0, 1]"),
            ));
        }
        Ok(Detection {
            bbox,
            confidence,
            class,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// A validated collection of records with a clip-consistent split assignment.
///
/// The only way to obtain one is [`DatasetManifest::new`] (or the loaders
/// built on it), which rejects duplicate ids, dangling split keys and clips
/// spread over more than one split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    name: String,
    class_labeled: bool,
    records: Vec<ImageRecord>,
    split_assignment: BTreeMap<String, Split>,
}

impl DatasetManifest {
    pub fn new(
        name: impl Into<String>,
        records: Vec<ImageRecord>,
        split_assignment: BTreeMap<String, Split>,
    ) -> Result<Self> {
        Self::with_class_labels(name, false, records, split_assignment)
    }

    /// Like [`DatasetManifest::new`], additionally requiring every annotation
    /// to carry a known polyp class when `class_labeled` is set.
    pub fn with_class_labels(
        name: impl Into<String>,
        class_labeled: bool,
        records: Vec<ImageRecord>,
        split_assignment: BTreeMap<String, Split>,
    ) -> Result<Self> {
        let m = DatasetManifest {
            name: name.into(),
            class_labeled,
            records,
            split_assignment,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            r.validate()?;
            if !ids.insert(r.id.as_str()) {
                return Err(Error::validation(format!("record `{}`", r.id), "duplicate id"));
            }
            if self.class_labeled && r.annotations.iter().any(|a| a.class == PolypClass::Unknown) {
                return Err(Error::validation(
                    format!("record `{}`", r.id),
                    "class-labeled dataset contains an `unknown` annotation",
                ));
            }
        }
        for key in self.split_assignment.keys() {
            if !ids.contains(key.as_str()) {
                return Err(Error::validation(
                    format!("record `{key}`"),
                    "split assignment refers to a missing record",
                ));
            }
        }
        let mut clip_split: HashMap<&str, (Split, &str)> = HashMap::new();
        for r in &self.records {
            let Some(&split) = self.split_assignment.get(&r.id) else {
                continue;
            };
            match clip_split.get(r.clip_id.as_str()) {
                Some(&(other, other_id)) if other != split => {
                    return Err(Error::validation(
                        format!("record `{}`", r.id),
                        format!(
                            "clip `{}` is split across {other} (record `{other_id}`) and {split}",
                            r.clip_id
                        ),
                    ));
                }
                Some(_) => {}
                None => {
                    clip_split.insert(&r.clip_id, (split, &r.id));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class_labeled(&self) -> bool {
        self.class_labeled
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn split_assignment(&self) -> &BTreeMap<String, Split> {
        &self.split_assignment
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split_assignment.get(id).copied()
    }

    /// Records assigned to `split`, in manifest order.
    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records
            .iter()
            .filter(move |r| self.split_of(&r.id) == Some(split))
    }

    /// Distinct clip ids in first-appearance order.
    pub fn clip_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.clip_id.as_str()))
            .map(|r| r.clip_id.as_str())
            .collect()
    }

    /// Keeps only records matching `keep`; split keys of dropped records go too.
    pub fn filtered(&self, name: impl Into<String>, keep: impl Fn(&ImageRecord) -> bool) -> Self {
        let records: Vec<ImageRecord> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        let split_assignment = records
            .iter()
            .filter_map(|r| self.split_of(&r.id).map(|s| (r.id.clone(), s)))
            .collect();
        DatasetManifest {
            name: name.into(),
            class_labeled: self.class_labeled,
            records,
            split_assignment,
        }
    }

    pub fn into_parts(self) -> (String, bool, Vec<ImageRecord>, BTreeMap<String, Split>) {
        (
            self.name,
            self.class_labeled,
            self.records,
            self.split_assignment,
        )
    }
}
