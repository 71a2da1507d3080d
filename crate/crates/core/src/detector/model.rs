use std::path::Path;

use image::RgbImage;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detector::anchors::{assign, decode, encode, make_anchors, nms, Assignment};
use crate::detector::config::DetectorConfig;
use crate::detector::preprocess::{preprocess, ResizeTransform};
use crate::error::{Error, Result};
use crate::imaging::to_tensor;
use crate::nn::graph::sigmoid;
use crate::nn::store::{read_tensors, write_tensors};
use crate::nn::{Architecture, Graph, Init, LayerSpec, Network, Tensor, Var};
use crate::types::{BoundingBox, Detection, Modality, PolypClass};

pub const ARCH_TAG: &str = "anchor-grid-v1";

pub(crate) const NET_TRUNK: usize = 0;
pub(crate) const NET_CLS: usize = 1;
pub(crate) const NET_BOX: usize = 2;

/// Anything that turns an image into scored boxes in native coordinates.
pub trait Detector {
    fn detect(&self, image: &RgbImage) -> Result<Vec<Detection>>;
}

/// What a model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub dataset: String,
    pub modality: Modality,
}

/// Ground truth of one preprocessed image.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub boxes: Vec<BoundingBox>,
    pub classes: Vec<PolypClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionLoss {
    pub cls: f64,
    pub bbox: f64,
    pub total: f64,
}

/// Single-stage detector: a strided convolutional trunk with classification
/// and box-regression heads over a grid of square anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGridDetector {
    pub config: DetectorConfig,
    pub trunk: Network,
    pub cls_head: Network,
    pub box_head: Network,
    anchors: Vec<BoundingBox>,
}

fn conv(out_channels: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv {
        out_channels,
        kernel: 3,
        stride,
        pad: 1,
        reflect: false,
    }
}

fn architectures(c: &DetectorConfig) -> (Architecture, Architecture, Architecture) {
    let mut layers = Vec::new();
    let mut ch = c.width;
    for i in 0..c.downsamplings.max(1) {
        ch = c.width << i.min(2);
        layers.extend([conv(ch, if i < c.downsamplings { 2 } else { 1 }), LayerSpec::Relu]);
    }
    layers.extend([conv(ch, 1), LayerSpec::Relu]);
    let trunk = Architecture { in_channels: 3, layers };
    let head = |out| Architecture {
        in_channels: ch,
        layers: vec![conv(ch, 1), LayerSpec::Relu, conv(out, 1)],
    };
    let a = c.anchor_scales.len();
    (trunk, head(a * c.classes.len()), head(a * 4))
}

impl AnchorGridDetector {
    pub fn new(config: DetectorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (ta, ca, ba) = architectures(&config);
        let trunk = Network::new(ta, Init::He, rng)?;
        let mut cls_head = Network::new(ca, Init::He, rng)?;
        let mut box_head = Network::new(ba, Init::He, rng)?;
        // Output layers start small; class logits start at a 1% prior.
        let prior = 0.01f64;
        for (net, bias) in [(&mut cls_head, -((1.0 - prior) / prior).ln()), (&mut box_head, 0.0)] {
            let n = net.params.len();
            for v in net.params[n - 2].data_mut() {
                *v = 0.01 * rng.sample::<f64, _>(StandardNormal);
            }
            for v in net.params[n - 1].data_mut() {
                *v = bias;
            }
        }
        Ok(Self::assemble(config, trunk, cls_head, box_head))
    }

    fn assemble(config: DetectorConfig, trunk: Network, cls_head: Network, box_head: Network) -> Self {
        let anchors = make_anchors(config.image_size, config.grid(), &config.anchor_scales);
        AnchorGridDetector {
            config,
            trunk,
            cls_head,
            box_head,
            anchors,
        }
    }

    pub fn anchors(&self) -> &[BoundingBox] {
        &self.anchors
    }

    pub fn nets(&self) -> [&Network; 3] {
        [&self.trunk, &self.cls_head, &self.box_head]
    }

    pub fn nets_mut(&mut self) -> [&mut Network; 3] {
        [&mut self.trunk, &mut self.cls_head, &mut self.box_head]
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let f = self.trunk.forward(g, NET_TRUNK, x)?;
        let c = self.cls_head.forward(g, NET_CLS, f)?;
        let b = self.box_head.forward(g, NET_BOX, f)?;
        Ok((c, b))
    }

    /// Reorders a head output laid out as `[anchor * k + j, row, col]` to
    /// anchor-major `[anchor index * k + j]`.
    fn anchor_major(&self, t: &Tensor, k: usize) -> Vec<f64> {
        let grid = self.config.grid();
        let a = self.config.anchor_scales.len();
        let d = t.data();
        let mut out = vec![0.0; self.anchors.len() * k];
        for gy in 0..grid {
            for gx in 0..grid {
                for ai in 0..a {
                    let idx = (gy * grid + gx) * a + ai;
                    for j in 0..k {
                        out[idx * k + j] = d[((ai * k + j) * grid + gy) * grid + gx];
                    }
                }
            }
        }
        out
    }

    /// Head targets and weights for one image, in head layout.
    fn targets(&self, target: &Target) -> Result<(Tensor, Tensor, Tensor, Tensor, usize)> {
        let c = &self.config;
        let (grid, a, k) = (c.grid(), c.anchor_scales.len(), c.classes.len());
        let assignment = assign(&self.anchors, &target.boxes, c.positive_iou, c.negative_iou);
        let mut cls_t = Tensor::zeros(&[a * k, grid, grid]);
        let mut cls_w = Tensor::zeros(&[a * k, grid, grid]);
        let mut box_t = Tensor::zeros(&[a * 4, grid, grid]);
        let mut box_w = Tensor::zeros(&[a * 4, grid, grid]);
        let mut positives = 0;
        let class_idx = target
            .classes
            .iter()
            .map(|&cl| {
                c.class_index(cl)
                    .ok_or_else(|| Error::validation("target", format!("class `{cl}` not in the detector's class set")))
            })
            .collect::<Result<Vec<_>>>()?;
        for (idx, asg) in assignment.iter().enumerate() {
            let (cell, ai) = (idx / a, idx % a);
            let (gy, gx) = (cell / grid, cell % grid);
            let at = |ch: usize| (ch * grid + gy) * grid + gx;
            match *asg {
                Assignment::Ignore => {}
                Assignment::Negative => {
                    for j in 0..k {
                        cls_w.data_mut()[at(ai * k + j)] = 1.0;
                    }
                }
                Assignment::Positive(gi) => {
                    positives += 1;
                    for j in 0..k {
                        cls_w.data_mut()[at(ai * k + j)] = 1.0;
                    }
                    cls_t.data_mut()[at(ai * k + class_idx[gi])] = 1.0;
                    let enc = encode(&self.anchors[idx], &target.boxes[gi]);
                    for (j, v) in enc.iter().enumerate() {
                        box_t.data_mut()[at(ai * 4 + j)] = *v;
                        box_w.data_mut()[at(ai * 4 + j)] = 1.0;
                    }
                }
            }
        }
        Ok((cls_t, cls_w, box_t, box_w, positives))
    }

    /// Records the training loss of one preprocessed image.
    pub fn loss_graph(&self, image: &Tensor, target: &Target) -> Result<(Graph, Var, DetectionLoss)> {
        let c = &self.config;
        let (cls_t, cls_w, box_t, box_w, positives) = self.targets(target)?;
        let norm = positives.max(1) as f64;
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let (cls, bbox) = self.forward(&mut g, x)?;
        let lc = g.sigmoid_focal(cls, cls_t, cls_w, c.focal_alpha, c.focal_gamma, norm)?;
        let lb = g.smooth_l1(bbox, box_t, box_w, c.smooth_l1_beta, norm)?;
        let root = g.lin_comb(&[(lc, 1.0), (lb, c.box_loss_weight)])?;
        let loss = DetectionLoss {
            cls: g.value(lc).item(),
            bbox: g.value(lb).item(),
            total: g.value(root).item(),
        };
        if !loss.total.is_finite() {
            return Err(Error::NonFinite { component: "detection loss".into() });
        }
        Ok((g, root, loss))
    }

    /// Detections in working coordinates for a preprocessed image.
    pub fn detect_tensor(&self, image: &Tensor) -> Result<Vec<(BoundingBox, f64, PolypClass)>> {
        let c = &self.config;
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let (cls, bbox) = self.forward(&mut g, x)?;
        let k = c.classes.len();
        let logits = self.anchor_major(g.value(cls), k);
        let offsets = self.anchor_major(g.value(bbox), 4);
        let mut cands: Vec<(usize, f64, usize)> = logits
            .chunks(k)
            .enumerate()
            .filter_map(|(i, l)| {
                let (j, z) = l
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &z)| if z > best.1 { (j, z) } else { best });
                let p = sigmoid(z);
                (p >= c.confidence_floor).then_some((i, p, j))
            })
            .collect();
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cands.truncate(1000);
        let size = c.image_size;
        let boxed: Vec<(BoundingBox, f64, PolypClass)> = cands
            .into_iter()
            .filter_map(|(i, p, j)| {
                let o = &offsets[4 * i..4 * i + 4];
                decode(&self.anchors[i], [o[0], o[1], o[2], o[3]])
                    .clamp_to(size, size)
                    .map(|b| (b, p, c.classes[j]))
            })
            .collect();
        let pairs: Vec<(BoundingBox, f64)> = boxed.iter().map(|(b, p, _)| (*b, *p)).collect();
        Ok(nms(&pairs, c.nms_iou)
            .into_iter()
            .take(c.max_detections)
            .map(|i| boxed[i])
            .collect())
    }

    pub fn preprocess(&self, img: &RgbImage, boxes: &[BoundingBox]) -> Result<(Tensor, Vec<BoundingBox>, ResizeTransform)> {
        let (resized, mapped, t) = preprocess(img, boxes, self.config.image_size)?;
        Ok((to_tensor(&resized), mapped, t))
    }
}

impl Detector for AnchorGridDetector {
    fn detect(&self, image: &RgbImage) -> Result<Vec<Detection>> {
        let (x, _, t) = self.preprocess(image, &[])?;
        let mut out = Vec::new();
        for (b, p, class) in self.detect_tensor(&x)? {
            if let Some(native) = t.inverse(&b) {
                out.push(Detection::new(native, p, class)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_f1: Option<f64>,
    pub val_threshold: Option<f64>,
}

/// Trained detector plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorCheckpoint {
    pub model: AnchorGridDetector,
    pub fingerprint: Fingerprint,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    arch: String,
    config: DetectorConfig,
    fingerprint: Fingerprint,
    best_epoch: usize,
    history: Vec<EpochRecord>,
}

const NET_FILES: [&str; 3] = ["trunk.params", "cls_head.params", "box_head.params"];

impl DetectorCheckpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (net, file) in self.model.nets().into_iter().zip(NET_FILES) {
            write_tensors(&dir.join(file), &net.params)?;
        }
        let meta = CheckpointMeta {
            arch: ARCH_TAG.into(),
            config: self.model.config.clone(),
            fingerprint: self.fingerprint.clone(),
            best_epoch: self.best_epoch,
            history: self.history.clone(),
        };
        let path = dir.join("detector.json");
        let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("detector.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Decode {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        if meta.arch != ARCH_TAG {
            return Err(Error::Config(format!("unsupported detector architecture `{}`", meta.arch)));
        }
        meta.config.validate()?;
        let (ta, ca, ba) = architectures(&meta.config);
        let mut nets = Vec::new();
        for (arch, file) in [ta, ca, ba].into_iter().zip(NET_FILES) {
            nets.push(Network::from_params(arch, read_tensors(&dir.join(file))?)?);
        }
        let [trunk, cls_head, box_head]: [Network; 3] = nets.try_into().expect("three networks");
        Ok(DetectorCheckpoint {
            model: AnchorGridDetector::assemble(meta.config, trunk, cls_head, box_head),
            fingerprint: meta.fingerprint,
            best_epoch: meta.best_epoch,
            history: meta.history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> DetectorConfig {
        DetectorConfig {
            image_size: 32,
            downsamplings: 2,
            width: 4,
            ..DetectorConfig::default()
        }
    }

    #[test]
    fn untrained_model_emits_valid_sorted_detections() {
        let cfg = DetectorConfig { confidence_floor: 0.0, ..small() };
        let m = AnchorGridDetector::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let img = RgbImage::from_fn(48, 40, |x, y| image::Rgb([(x * 5) as u8, (y * 6) as u8, 100]));
        let dets = m.detect(&img).unwrap();
        assert!(!dets.is_empty() && dets.len() <= 20);
        for w in dets.windows(2) {
            assert!(w[0].confidence >= w[1].confidence);
        }
        for d in &dets {
            assert!(d.bbox.fits_within(48, 40));
        }
        assert_eq!(dets, m.detect(&img).unwrap());
    }

    #[test]
    fn prior_keeps_initial_confidences_low() {
        let m = AnchorGridDetector::new(small(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let img = RgbImage::from_pixel(32, 32, image::Rgb([120, 60, 50]));
        let dets = m.detect(&img).unwrap();
        assert!(dets.iter().all(|d| d.confidence < 0.05 + 1e-9) || dets.is_empty());
    }

    #[test]
    fn loss_gradient_matches_central_differences() {
        use crate::nn::Adam;
        let cfg = DetectorConfig {
            classes: PolypClass::LABELED.to_vec(),
            ..small()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = AnchorGridDetector::new(cfg, &mut rng).unwrap();
        let img = RgbImage::from_fn(32, 32, |x, y| image::Rgb([(x * 7 % 255) as u8, (y * 3) as u8, ((x + y) * 4) as u8]));
        let target = Target {
            boxes: vec![BoundingBox::new(4.0, 6.0, 14.0, 15.0).unwrap(), BoundingBox::new(18.0, 16.0, 30.0, 28.0).unwrap()],
            classes: vec![PolypClass::Adenoma, PolypClass::Hyperplastic],
        };
        let (x, _, _) = m.preprocess(&img, &[]).unwrap();
        let (g, root, _) = m.loss_graph(&x, &target).unwrap();
        let grads = g.backward(root).unwrap();
        let analytic: Vec<Vec<Tensor>> = (0..3).map(|n| Adam::collect(m.nets()[n], n, &grads)).collect();
        let h = 1e-6;
        for _ in 0..30 {
            let n = rng.random_range(0..3);
            let p = rng.random_range(0..m.nets()[n].params.len());
            let i = rng.random_range(0..m.nets()[n].params[p].len());
            let orig = m.nets()[n].params[p].data()[i];
            let mut eval = |v: f64| {
                m.nets_mut()[n].params[p].data_mut()[i] = v;
                m.loss_graph(&x, &target).unwrap().2.total
            };
            let num = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            eval(orig);
            let a = analytic[n][p].data()[i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-4);
            assert!(rel < 1e-4, "net {n} param {p}[{i}]: {a} vs {num}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = AnchorGridDetector::new(small(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let ck = DetectorCheckpoint {
            model: m,
            fingerprint: Fingerprint { dataset: "d".into(), modality: Modality::Nbi },
            best_epoch: 3,
            history: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        assert_eq!(DetectorCheckpoint::load(dir.path()).unwrap(), ck);
    }
}
