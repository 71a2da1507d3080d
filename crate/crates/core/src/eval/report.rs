use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::curve::{pr_curve, CurvePoint};
use crate::eval::matching::{match_detections, EvalConfig, MatchCounts};
use crate::eval::metrics::Scores;
use crate::eval::predictions::read_predictions;
use crate::types::{BoundingBox, DatasetManifest, Detection, ImageRecord, PolypClass, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    pub pr_curve: Vec<CurvePoint>,
    pub chosen_threshold: f64,
    pub iou_threshold: f64,
    pub images: usize,
    pub per_class: BTreeMap<PolypClass, Scores>,
}

/// One evaluated image: its detections and annotated ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<(BoundingBox, PolypClass)>,
}

impl Scene {
    pub fn from_record(record: &ImageRecord, detections: Vec<Detection>) -> Self {
        Scene {
            detections,
            ground_truth: record.annotations.iter().map(|a| (a.bbox, a.class)).collect(),
        }
    }

    pub fn gt_boxes(&self) -> Vec<BoundingBox> {
        self.ground_truth.iter().map(|(b, _)| *b).collect()
    }
}

/// Micro-averaged report over `scenes` at `config`.
///
/// Per-class scores restrict both ground truth and detections to one class;
/// a detection whose class differs from the box it overlaps is therefore a
/// false positive for its own class and leaves a false negative in the other.
pub fn evaluate_scenes(scenes: &[Scene], config: &EvalConfig) -> Result<MetricsReport> {
    let counts: MatchCounts = scenes
        .iter()
        .map(|s| match_detections(&s.detections, &s.gt_boxes(), config))
        .sum();
    let overall = Scores::from_counts(counts);

    let classes: BTreeSet<PolypClass> = scenes
        .iter()
        .flat_map(|s| {
            s.ground_truth
                .iter()
                .map(|(_, c)| *c)
                .chain(s.detections.iter().map(|d| d.class))
        })
        .collect();
    let per_class = classes
        .into_iter()
        .map(|class| {
            let c: MatchCounts = scenes
                .iter()
                .map(|s| {
                    let dets: Vec<Detection> =
                        s.detections.iter().filter(|d| d.class == class).copied().collect();
                    let gts: Vec<BoundingBox> = s
                        .ground_truth
                        .iter()
                        .filter(|(_, c)| *c == class)
                        .map(|(b, _)| *b)
                        .collect();
                    match_detections(&dets, &gts, config)
                })
                .sum();
            (class, Scores::from_counts(c))
        })
        .collect();

    let curve = if scenes.is_empty() {
        Vec::new()
    } else {
        let preds: Vec<Vec<Detection>> = scenes.iter().map(|s| s.detections.clone()).collect();
        let gts: Vec<Vec<BoundingBox>> = scenes.iter().map(Scene::gt_boxes).collect();
        pr_curve(&preds, &gts, config.iou_threshold)?
    };

    Ok(MetricsReport {
        counts,
        precision: overall.precision,
        recall: overall.recall,
        f1: overall.f1,
        precision_degenerate: overall.precision_degenerate,
        recall_degenerate: overall.recall_degenerate,
        pr_curve: curve,
        chosen_threshold: config.confidence_threshold,
        iou_threshold: config.iou_threshold,
        images: scenes.len(),
        per_class,
    })
}

/// Pairs every record of `split` with its predictions. Images without
/// predictions get an empty list; prediction ids outside the split are errors.
pub fn scenes_for_split(
    predictions: &BTreeMap<String, Vec<Detection>>,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<Scene>> {
    for id in predictions.keys() {
        match manifest.split_of(id) {
            Some(s) if s == split => {}
            Some(s) => {
                return Err(Error::validation(
                    format!("prediction for `{id}`"),
                    format!("image belongs to split {s}, not {split}"),
                ))
            }
            None => {
                return Err(Error::validation(
                    format!("prediction for `{id}`"),
                    "image id not in manifest split assignment",
                ))
            }
        }
    }
    Ok(manifest
        .records_in(split)
        .map(|r| Scene::from_record(r, predictions.get(&r.id).cloned().unwrap_or_default()))
        .collect())
}

/// Evaluates a predictions file against the records of one split.
pub fn evaluate_run(
    predictions_path: &Path,
    manifest: &DatasetManifest,
    split: Split,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    let predictions = read_predictions(predictions_path)?;
    let scenes = scenes_for_split(&predictions, manifest, split)?;
    evaluate_scenes(&scenes, config)
}

fn rows(report: &MetricsReport) -> Vec<(String, &MatchCounts, [f64; 3], bool)> {
    let overall = (
        "all".to_string(),
        &report.counts,
        [report.precision, report.recall, report.f1],
        report.precision_degenerate || report.recall_degenerate,
    );
    std::iter::once(overall)
        .chain(report.per_class.iter().map(|(c, s)| {
            (
                c.to_string(),
                &s.counts,
                [s.precision, s.recall, s.f1],
                s.precision_degenerate || s.recall_degenerate,
            )
        }))
        .collect()
}

/// One markdown table: overall and per-class counts and scores. Degenerate
/// (0/0) scores are marked with `*`.
pub fn report_markdown(report: &MetricsReport) -> String {
    let mut s = format!(
        "IoU {} | threshold {} | images {}\n\n| class | TP | FP | FN | Precision | Recall | F1 |\n|---|---|---|---|---|---|---|\n",
        report.iou_threshold, report.chosen_threshold, report.images
    );
    for (name, c, [p, r, f], degenerate) in rows(report) {
        let mark = if degenerate { "*" } else { "" };
        s.push_str(&format!(
            "| {name} | {} | {} | {} | {p:.4}{mark} | {r:.4}{mark} | {f:.4} |\n",
            c.tp, c.fp, c.fn_
        ));
    }
    s
}

/// The rows of [`report_markdown`] as comma-separated values, full precision.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut s = String::from("class,tp,fp,fn,precision,recall,f1,degenerate,iou_threshold,threshold\n");
    for (name, c, [p, r, f], degenerate) in rows(report) {
        s.push_str(&format!(
            "{name},{},{},{},{p},{r},{f},{degenerate},{},{}\n",
            c.tp, c.fp, c.fn_, report.iou_threshold, report.chosen_threshold
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let gts = vec![
            (bx(0.0, 0.0, 10.0, 10.0), PolypClass::Adenoma),
            (bx(20.0, 20.0, 30.0, 35.0), PolypClass::Hyperplastic),
        ];
        let dets = gts
            .iter()
            .map(|(b, c)| Detection::new(*b, 0.9, *c).unwrap())
            .collect();
        let scenes = vec![Scene {
            detections: dets,
            ground_truth: gts,
        }];
        let r = evaluate_scenes(&scenes, &EvalConfig::new(0.5, 0.5).unwrap()).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        for s in r.per_class.values() {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn text_reports_list_overall_then_classes() {
        let scenes = vec![Scene {
            detections: vec![Detection::new(bx(0.0, 0.0, 10.0, 10.0), 0.9, PolypClass::Adenoma).unwrap()],
            ground_truth: vec![(bx(0.0, 0.0, 10.0, 10.0), PolypClass::Hyperplastic)],
        }];
        let r = evaluate_scenes(&scenes, &EvalConfig::default()).unwrap();
        let csv = report_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("all,1,0,0,1,1,1,false"), "{}", lines[1]);
        assert!(lines[2].starts_with("hyperplastic,0,0,1,0,0,0,true"), "{}", lines[2]);
        assert!(lines[3].starts_with("adenoma,0,1,0,0,0,0,true"), "{}", lines[3]);
        let md = report_markdown(&r);
        assert!(md.contains("| all | 1 | 0 | 0 | 1.0000 | 1.0000 | 1.0000 |"), "{md}");
        assert!(md.contains("0.0000*"));
    }

    #[test]
    fn class_mismatch_counts_against_both_classes() {
        let scenes = vec![Scene {
            detections: vec![Detection::new(bx(0.0, 0.0, 10.0, 10.0), 0.9, PolypClass::Adenoma).unwrap()],
            ground_truth: vec![(bx(0.0, 0.0, 10.0, 10.0), PolypClass::Hyperplastic)],
        }];
        let r = evaluate_scenes(&scenes, &EvalConfig::default()).unwrap();
        assert_eq!(r.counts, MatchCounts { tp: 1, fp: 0, fn_: 0 });
        assert_eq!(r.per_class[&PolypClass::Adenoma].counts, MatchCounts { tp: 0, fp: 1, fn_: 0 });
        assert_eq!(
            r.per_class[&PolypClass::Hyperplastic].counts,
            MatchCounts { tp: 0, fp: 0, fn_: 1 }
        );
    }

    #[test]
    fn missing_predictions_are_false_negatives() {
        let scenes = vec![Scene {
            detections: vec![],
            ground_truth: vec![(bx(0.0, 0.0, 10.0, 10.0), PolypClass::Adenoma)],
        }];
        let r = evaluate_scenes(&scenes, &EvalConfig::default()).unwrap();
        assert_eq!(r.recall, 0.0);
        assert!(r.precision_degenerate);
    }
}
