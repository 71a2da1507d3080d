//! Modality translation from white-light (WLI) to synthetic narrow-band
//! (SNBI) colonoscopy images, with a reference polyp detector and the
//! IoU-based detection evaluation used to compare modalities.

pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod figures;
pub mod imaging;
pub mod ingest;
mod jsonl;
pub mod manifest;
pub mod nn;
pub mod pairing;
pub mod synth;
pub mod translator;
pub mod types;

pub use error::{Error, Result};
pub use manifest::{load_manifest, save_manifest};
pub use types::{
    Annotation, BoundingBox, DatasetManifest, Detection, ImageRecord, Modality, PolypClass, Split,
};
