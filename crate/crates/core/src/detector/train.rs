use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::config::DetectorConfig;
use crate::detector::model::{
    AnchorGridDetector, Detector, DetectorCheckpoint, EpochRecord, Fingerprint, Target, NET_BOX, NET_CLS, NET_TRUNK,
};
use crate::error::{Error, Result};
use crate::eval::{pr_curve, select_threshold, Scene};
use crate::imaging::load_rgb;
use crate::nn::{Adam, Tensor};
use crate::types::{BoundingBox, DatasetManifest, Detection, ImageRecord, Split};

struct Sample {
    image: Tensor,
    target: Target,
}

fn load_sample(model: &AnchorGridDetector, record: &ImageRecord, base_dir: &Path) -> Result<Sample> {
    let img = load_rgb(&base_dir.join(&record.path))?;
    let (image, boxes, _) = model.preprocess(&img, &record.boxes())?;
    Ok(Sample {
        image,
        target: Target {
            boxes,
            classes: record.annotations.iter().map(|a| a.class).collect(),
        },
    })
}

/// Mirrors a `[C, H, W]` image and its boxes left to right.
fn hflip(s: &Sample) -> Sample {
    let (c, h, w) = s.image.chw().expect("image tensor");
    let src = s.image.data();
    let mut data = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                data[(ch * h + y) * w + x] = src[(ch * h + y) * w + (w - 1 - x)];
            }
        }
    }
    let wf = w as f64;
    Sample {
        image: Tensor::from_vec(&[c, h, w], data).expect("same shape"),
        target: Target {
            boxes: s
                .target
                .boxes
                .iter()
                .map(|b| BoundingBox {
                    x_min: wf - b.x_max,
                    y_min: b.y_min,
                    x_max: wf - b.x_min,
                    y_max: b.y_max,
                })
                .collect(),
            classes: s.target.classes.clone(),
        },
    }
}

/// Single modality of the records, or a validation error.
fn modality_of(records: &[&ImageRecord]) -> Result<crate::types::Modality> {
    let first = records[0].modality;
    if let Some(r) = records.iter().find(|r| r.modality != first) {
        return Err(Error::Modality {
            id: r.id.clone(),
            expected: first.to_string(),
            got: r.modality.to_string(),
        });
    }
    Ok(first)
}

/// Validation loss, F1 at the F1-maximizing threshold, and that threshold.
fn validate(model: &AnchorGridDetector, val: &[(Sample, &ImageRecord)]) -> Result<(f64, f64, f64)> {
    let mut loss = 0.0;
    let mut scenes = Vec::new();
    for (s, r) in val {
        loss += model.loss_graph(&s.image, &s.target)?.2.total / val.len() as f64;
        let dets = model
            .detect_tensor(&s.image)?
            .into_iter()
            .map(|(b, p, c)| Detection::new(b, p, c))
            .collect::<Result<Vec<_>>>()?;
        let mut scene = Scene::from_record(r, dets);
        scene.ground_truth = s.target.boxes.iter().copied().zip(s.target.classes.iter().copied()).collect();
        scenes.push(scene);
    }
    let preds: Vec<Vec<Detection>> = scenes.iter().map(|s| s.detections.clone()).collect();
    let gts: Vec<Vec<BoundingBox>> = scenes.iter().map(Scene::gt_boxes).collect();
    let curve = pr_curve(&preds, &gts, 0.5)?;
    let threshold = select_threshold(&curve)?;
    let f1 = curve
        .iter()
        .find(|p| p.threshold == threshold)
        .map(|p| p.f1())
        .unwrap_or(0.0);
    Ok((loss, f1, threshold))
}

/// Trains the reference detector on `train_split` records. Each epoch is
/// scored on `val_split` (when it has records) and the epoch with the best
/// validation F1 is kept, ties going to the lower validation loss and then
/// the earlier epoch; without validation records the last epoch is kept.
pub fn train_detector(
    config: DetectorConfig,
    manifest: &DatasetManifest,
    base_dir: &Path,
    train_split: Split,
    val_split: Split,
) -> Result<DetectorCheckpoint> {
    config.validate()?;
    let train: Vec<&ImageRecord> = manifest.records_in(train_split).collect();
    if train.is_empty() {
        return Err(Error::EmptyInput(format!("no `{train_split}` records in {}", manifest.name())));
    }
    let fingerprint = Fingerprint {
        dataset: manifest.name().to_string(),
        modality: modality_of(&train)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = AnchorGridDetector::new(config.clone(), &mut rng)?;
    let samples = train
        .iter()
        .map(|r| load_sample(&model, r, base_dir))
        .collect::<Result<Vec<_>>>()?;
    let val_records: Vec<&ImageRecord> = manifest.records_in(val_split).collect();
    let val = val_records
        .iter()
        .map(|r| Ok((load_sample(&model, r, base_dir)?, *r)))
        .collect::<Result<Vec<_>>>()?;

    let mut opts = model.nets().map(|n| Adam::new(n, 0.9, 0.999));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<((f64, f64), usize, AnchorGridDetector)> = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for &i in &order {
            let flipped;
            let s = if config.horizontal_flip && rng.random_bool(0.5) {
                flipped = hflip(&samples[i]);
                &flipped
            } else {
                &samples[i]
            };
            let (g, root, loss) = model.loss_graph(&s.image, &s.target)?;
            train_loss += loss.total / samples.len() as f64;
            let grads = g.backward(root)?;
            for (net_id, opt) in [NET_TRUNK, NET_CLS, NET_BOX].into_iter().zip(opts.iter_mut()) {
                let net = &mut model.nets_mut()[net_id];
                let gr = Adam::collect(net, net_id, &grads);
                opt.update(net, &gr, config.base_lr)?;
            }
        }
        let mut record = EpochRecord {
            epoch,
            train_loss,
            val_loss: None,
            val_f1: None,
            val_threshold: None,
        };
        // Higher is better in both components.
        let score = if val.is_empty() {
            (epoch as f64, 0.0)
        } else {
            let (loss, f1, threshold) = validate(&model, &val)?;
            record.val_loss = Some(loss);
            record.val_f1 = Some(f1);
            record.val_threshold = Some(threshold);
            (f1, -loss)
        };
        info!(
            "detector epoch {epoch}: train {train_loss:.4} val {:?} f1 {:?}",
            record.val_loss, record.val_f1
        );
        history.push(record);
        if best.as_ref().is_none_or(|(b, _, _)| score.0 > b.0 || (score.0 == b.0 && score.1 > b.1)) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(DetectorCheckpoint {
        model,
        fingerprint,
        best_epoch,
        history,
    })
}

/// Runs `detector` on every record of `split`, keyed by record id.
pub fn detect_split(
    detector: &dyn Detector,
    manifest: &DatasetManifest,
    base_dir: &Path,
    split: Option<Split>,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut out = BTreeMap::new();
    for r in manifest.records() {
        if split.is_some_and(|s| manifest.split_of(&r.id) != Some(s)) {
            continue;
        }
        let img = load_rgb(&base_dir.join(&r.path))?;
        out.insert(r.id.clone(), detector.detect(&img)?);
    }
    Ok(out)
}
