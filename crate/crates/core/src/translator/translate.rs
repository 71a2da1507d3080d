use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::imaging::{from_tensor, load_rgb, resize, save_png, to_tensor};
use crate::nn::store::read_tensors;
use crate::nn::Network;
use crate::translator::config::TranslatorConfig;
use crate::types::{DatasetManifest, ImageRecord, Modality};

/// The WLI-to-NBI generator with its working resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Translator {
    pub generator: Network,
    pub image_size: u32,
}

impl Translator {
    /// Loads `G` and the config from a checkpoint directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let config = TranslatorConfig::load(&dir.join("config.toml"))?;
        let generator = Network::from_params(config.generator_arch(), read_tensors(&dir.join("G.params"))?)?;
        Ok(Translator {
            generator,
            image_size: config.image_size,
        })
    }

    /// Resizes to the working resolution, translates, and resizes back.
    pub fn translate_image(&self, img: &RgbImage) -> Result<RgbImage> {
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::Shape("translate of an empty image".into()));
        }
        let x = to_tensor(&resize(img, self.image_size, self.image_size));
        let y = from_tensor(&self.generator.infer(&x)?)?;
        Ok(resize(&y, w, h))
    }

    /// Translates one WLI record, writing `<out_dir>/<id>_snbi.png`. The new
    /// record keeps clip, size and annotations and points back at its source.
    /// Its path is relative to `out_dir`.
    pub fn translate_record(&self, record: &ImageRecord, base_dir: &Path, out_dir: &Path) -> Result<ImageRecord> {
        if record.modality != Modality::Wli {
            return Err(Error::Modality {
                id: record.id.clone(),
                expected: Modality::Wli.to_string(),
                got: record.modality.to_string(),
            });
        }
        let img = load_rgb(&base_dir.join(&record.path))?;
        let out = self.translate_image(&img)?;
        let id = snbi_id(&record.id);
        let rel = PathBuf::from(format!("{id}.png"));
        save_png(&out, &out_dir.join(&rel))?;
        Ok(ImageRecord {
            id,
            path: rel,
            modality: Modality::Snbi,
            clip_id: record.clip_id.clone(),
            width: out.width(),
            height: out.height(),
            annotations: record.annotations.clone(),
            source_id: Some(record.id.clone()),
        })
    }

    /// Translates every WLI record of `manifest`; split assignments carry
    /// over to the new ids.
    pub fn translate_manifest(
        &self,
        manifest: &DatasetManifest,
        base_dir: &Path,
        out_dir: &Path,
        name: &str,
    ) -> Result<DatasetManifest> {
        let mut records = Vec::new();
        let mut splits = BTreeMap::new();
        for r in manifest.records().iter().filter(|r| r.modality == Modality::Wli) {
            let t = self.translate_record(r, base_dir, out_dir)?;
            if let Some(s) = manifest.split_of(&r.id) {
                splits.insert(t.id.clone(), s);
            }
            records.push(t);
        }
        if records.is_empty() {
            return Err(Error::EmptyInput(format!("manifest {} has no WLI records", manifest.name())));
        }
        DatasetManifest::with_class_labels(name, manifest.class_labeled(), records, splits)
    }
}

pub fn snbi_id(wli_id: &str) -> String {
    format!("{wli_id}_snbi")
}
