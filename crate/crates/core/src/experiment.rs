//! Declarative experiments: translator stages, detector runs and a test
//! matrix, executed as resumable stages with one report per matrix cell.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::detector::{detect_split, train_detector, DetectorCheckpoint, DetectorConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, select_threshold, write_predictions, EvalConfig, MetricsReport};
use crate::ingest::parse_frame_index;
use crate::manifest::{load_manifest, save_manifest};
use crate::pairing::{build_semi_pairs, save_index};
use crate::translator::{load_checkpoint, train, ImageSource, TrainState, Translator, TranslatorConfig};
use crate::types::{DatasetManifest, ImageRecord, Modality, PolypClass, Split};

/// Name a dataset uses to ask for the translator trained by the experiment's
/// own stages.
pub const OWN_TRANSLATOR: &str = "stages";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslatorStage {
    /// Manifest holding both WLI and NBI records for semi-pairing.
    pub manifest: PathBuf,
    #[serde(default)]
    pub config: TranslatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// An existing manifest...
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// ...or the WLI records of another dataset, translated to SNBI.
    #[serde(default)]
    pub translate_from: Option<String>,
    /// `"stages"` or a translator checkpoint directory.
    #[serde(default)]
    pub translator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorRun {
    pub name: String,
    pub dataset: String,
    #[serde(default)]
    pub config: DetectorConfig,
    #[serde(default = "default_train")]
    pub train_split: Split,
    #[serde(default = "default_val")]
    pub val_split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixCell {
    /// Column label in the summary tables.
    pub column: String,
    pub model: String,
    /// Dataset whose test split is evaluated.
    pub dataset: String,
    /// Dataset whose threshold split picks the operating threshold; the
    /// model's own training dataset when absent.
    #[serde(default)]
    pub threshold_dataset: Option<String>,
    #[serde(default = "default_test")]
    pub test_split: Split,
}

fn default_train() -> Split {
    Split::Train
}
fn default_val() -> Split {
    Split::Val
}
fn default_test() -> Split {
    Split::Test
}
fn default_iou() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_val")]
    pub threshold_split: Split,
    #[serde(default = "default_iou")]
    pub iou_threshold: f64,
    /// Datasets whose records are intersected by clip and frame index
    /// before anything else runs.
    #[serde(default)]
    pub balance: Vec<String>,
    #[serde(default)]
    pub translator_stages: Vec<TranslatorStage>,
    pub datasets: BTreeMap<String, DatasetSpec>,
    pub detectors: Vec<DetectorRun>,
    pub matrix: Vec<MatrixCell>,
}

impl ExperimentSpec {
    /// Parses a spec and makes its relative paths relative to the spec file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: ExperimentSpec =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        spec.rebase(base);
        spec.validate()?;
        Ok(spec)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
        for s in &mut self.translator_stages {
            fix(&mut s.manifest);
        }
        for d in self.datasets.values_mut() {
            if let Some(p) = &mut d.manifest {
                fix(p);
            }
            if let Some(t) = &mut d.translator {
                if t != OWN_TRANSLATOR && Path::new(t).is_relative() {
                    *t = base.join(&*t).to_string_lossy().into_owned();
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, d) in &self.datasets {
            match (&d.manifest, &d.translate_from) {
                (Some(_), None) => {
                    if d.translator.is_some() {
                        return bad(format!("dataset `{name}` has a manifest; `translator` applies only to translated datasets"));
                    }
                }
                (None, Some(src)) => {
                    if !self.datasets.contains_key(src) {
                        return bad(format!("dataset `{name}` translates unknown dataset `{src}`"));
                    }
                    if self.datasets[src].translate_from.is_some() {
                        return bad(format!("dataset `{name}` translates a translated dataset"));
                    }
                    match d.translator.as_deref() {
                        None => return bad(format!("translated dataset `{name}` must name its translator")),
                        Some(OWN_TRANSLATOR) if self.translator_stages.is_empty() => {
                            return bad(format!("dataset `{name}` uses the experiment translator but no stages are declared"))
                        }
                        _ => {}
                    }
                }
                _ => return bad(format!("dataset `{name}` needs exactly one of `manifest` and `translate_from`")),
            }
        }
        for b in &self.balance {
            match self.datasets.get(b) {
                Some(d) if d.manifest.is_some() => {}
                _ => return bad(format!("balance entry `{b}` is not a manifest dataset")),
            }
        }
        let mut names = BTreeSet::new();
        for d in &self.detectors {
            if !names.insert(d.name.as_str()) {
                return bad(format!("detector `{}` declared twice", d.name));
            }
            if !self.datasets.contains_key(&d.dataset) {
                return bad(format!("detector `{}` uses unknown dataset `{}`", d.name, d.dataset));
            }
            d.config.validate()?;
        }
        let mut columns = BTreeSet::new();
        for c in &self.matrix {
            if !columns.insert(c.column.as_str()) {
                return bad(format!("matrix column `{}` declared twice", c.column));
            }
            if !names.contains(c.model.as_str()) {
                return bad(format!("matrix column `{}` references undeclared model `{}`", c.column, c.model));
            }
            for d in std::iter::once(&c.dataset).chain(&c.threshold_dataset) {
                if !self.datasets.contains_key(d) {
                    return bad(format!("matrix column `{}` references unknown dataset `{d}`", c.column));
                }
            }
        }
        if self.matrix.is_empty() {
            return bad("empty test matrix".into());
        }
        for s in &self.translator_stages {
            s.config.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub column: String,
    pub model: String,
    pub model_modality: Modality,
    pub dataset: String,
    pub threshold_dataset: String,
    pub threshold: f64,
    pub predictions: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub cells: Vec<CellReport>,
}

/// Frame position used to align modalities: the `_f<digits>` suffix of the
/// id, or the record's position within its clip.
fn frame_keys(m: &DatasetManifest) -> Vec<(String, usize)> {
    let mut ordinal: BTreeMap<&str, usize> = BTreeMap::new();
    m.records()
        .iter()
        .map(|r| {
            let n = ordinal.entry(&r.clip_id).or_default();
            let k = parse_frame_index(&r.id).unwrap_or(*n);
            *n += 1;
            (r.clip_id.clone(), k)
        })
        .collect()
}

/// Keeps, in every manifest, only records whose (clip, frame index) occurs
/// in all of them, so each modality contributes the same frames. Returned
/// manifests carry absolute image paths.
pub fn balance_manifests(manifests: &[(DatasetManifest, PathBuf)]) -> Result<Vec<DatasetManifest>> {
    let keys: Vec<Vec<(String, usize)>> = manifests.iter().map(|(m, _)| frame_keys(m)).collect();
    let mut common: BTreeSet<&(String, usize)> = keys[0].iter().collect();
    for k in &keys[1..] {
        let s: BTreeSet<&(String, usize)> = k.iter().collect();
        common = common.intersection(&s).copied().collect();
    }
    manifests
        .iter()
        .zip(&keys)
        .map(|((m, path), ks)| {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            let mut seen = BTreeSet::new();
            let records: Vec<ImageRecord> = m
                .records()
                .iter()
                .zip(ks)
                .filter(|(_, k)| common.contains(k) && seen.insert((*k).clone()))
                .map(|(r, _)| ImageRecord {
                    path: absolute(&base.join(&r.path)),
                    ..r.clone()
                })
                .collect();
            let splits = records
                .iter()
                .filter_map(|r| m.split_of(&r.id).map(|s| (r.id.clone(), s)))
                .collect();
            DatasetManifest::with_class_labels(m.name(), m.class_labeled(), records, splits)
        })
        .collect()
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf()
}

/// Runs stages under an output directory, skipping any with a completion
/// marker.
struct Runner<'a> {
    spec: &'a ExperimentSpec,
    out: PathBuf,
}

impl Runner<'_> {
    fn marker(&self, stage: &str) -> PathBuf {
        self.out.join("stages").join(format!("{stage}.done"))
    }

    fn stage(&self, stage: &str, body: impl FnOnce() -> Result<()>) -> Result<()> {
        let marker = self.marker(stage);
        if marker.exists() {
            info!("stage {stage}: already complete");
            return Ok(());
        }
        info!("stage {stage}: running");
        body().map_err(|e| e.in_stage(stage))?;
        let dir = marker.parent().expect("marker has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(&marker, b"").map_err(|e| Error::io(&marker, e))
    }

    fn dataset_path(&self, name: &str) -> PathBuf {
        let d = &self.spec.datasets[name];
        if self.spec.balance.iter().any(|b| b == name) {
            return self.out.join("balanced").join(format!("{name}.jsonl"));
        }
        match &d.manifest {
            Some(p) => p.clone(),
            None => self.out.join("datasets").join(name).join("manifest.jsonl"),
        }
    }

    fn translator_dir(&self, name: &str) -> PathBuf {
        match self.spec.datasets[name].translator.as_deref() {
            Some(OWN_TRANSLATOR) | None => self
                .out
                .join("translator")
                .join(format!("stage{}", self.spec.translator_stages.len().saturating_sub(1))),
            Some(p) => PathBuf::from(p),
        }
    }
}

/// Executes `spec` under `out_dir` (translate, train detectors, pick
/// thresholds on validation, evaluate the matrix) and writes `report.json`
/// plus Table-1- and Table-2-shaped summaries as markdown and CSV.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentReport> {
    run_experiment_with(spec, out_dir, true)
}

/// [`run_experiment`] with matrix cells evaluated concurrently or one after
/// another; the report is the same either way.
pub fn run_experiment_with(spec: &ExperimentSpec, out_dir: &Path, parallel_cells: bool) -> Result<ExperimentReport> {
    spec.validate()?;
    let r = Runner {
        spec,
        out: out_dir.to_path_buf(),
    };

    if !spec.balance.is_empty() {
        r.stage("balance", || {
            let inputs = spec
                .balance
                .iter()
                .map(|n| {
                    let p = spec.datasets[n].manifest.clone().expect("validated");
                    Ok((load_manifest(&p)?, p))
                })
                .collect::<Result<Vec<_>>>()?;
            for (name, m) in spec.balance.iter().zip(balance_manifests(&inputs)?) {
                info!("balanced `{name}`: {} records", m.records().len());
                save_manifest(&m, r.dataset_path(name))?;
            }
            Ok(())
        })?;
    }

    for (k, stage) in spec.translator_stages.iter().enumerate() {
        r.stage(&format!("translator-{k}"), || {
            let dir = out_dir.join("translator").join(format!("stage{k}"));
            let config = TranslatorConfig {
                seed: spec.seed.wrapping_add(k as u64),
                ..stage.config.clone()
            };
            let manifest = load_manifest(&stage.manifest)?;
            let build = build_semi_pairs(&manifest)?;
            save_index(&build, manifest.name(), &dir.join("pairs.jsonl"))?;
            let state = if dir.join("state.json").exists() {
                load_checkpoint(&dir)?
            } else if k > 0 {
                let prev = load_checkpoint(&out_dir.join("translator").join(format!("stage{}", k - 1)))?;
                TrainState::warm_start(prev, config)?
            } else {
                TrainState::new(config)?
            };
            let mut images = ImageSource::new(&manifest, &base_dir(&stage.manifest), state.config.image_size);
            train(state, &build.index, &mut images, &dir)?;
            Ok(())
        })?;
    }

    for (name, d) in &spec.datasets {
        let Some(src) = &d.translate_from else { continue };
        r.stage(&format!("translate-{name}"), || {
            let translator = Translator::load(&r.translator_dir(name))?;
            let src_path = r.dataset_path(src);
            let src_manifest = load_manifest(&src_path)?;
            let dst = r.dataset_path(name);
            let m = translator.translate_manifest(&src_manifest, &base_dir(&src_path), &base_dir(&dst), name)?;
            save_manifest(&m, &dst)
        })?;
    }

    for (i, run) in spec.detectors.iter().enumerate() {
        r.stage(&format!("detector-{}", run.name), || {
            let path = r.dataset_path(&run.dataset);
            let manifest = load_manifest(&path)?;
            let config = DetectorConfig {
                seed: spec.seed.wrapping_add(1000 + i as u64),
                ..run.config.clone()
            };
            let ck = train_detector(config, &manifest, &base_dir(&path), run.train_split, run.val_split)?;
            ck.save(&out_dir.join("detectors").join(&run.name))
        })?;
    }

    // Cells only read finished checkpoints and write their own files, so
    // they run concurrently; results are collected in matrix order.
    let run_cell = |cell: &MatrixCell| -> Result<CellReport> {
        let cell_json = out_dir.join("cells").join(format!("{}.json", cell.column));
        r.stage(&format!("cell-{}", cell.column), || {
            let run = spec.detectors.iter().find(|d| d.name == cell.model).expect("validated");
            let ck = DetectorCheckpoint::load(&out_dir.join("detectors").join(&run.name))?;
            let thr_name = cell.threshold_dataset.clone().unwrap_or_else(|| run.dataset.clone());
            let pred_dir = out_dir.join("predictions");

            let thr_path = r.dataset_path(&thr_name);
            let thr_manifest = load_manifest(&thr_path)?;
            let val_preds = detect_split(&ck.model, &thr_manifest, &base_dir(&thr_path), Some(spec.threshold_split))?;
            let val_file = pred_dir.join(format!("{}.{}.jsonl", cell.column, spec.threshold_split));
            write_predictions(&val_file, &val_preds)?;
            let val_report = evaluate_run(
                &val_file,
                &thr_manifest,
                spec.threshold_split,
                &EvalConfig::new(spec.iou_threshold, 0.0)?,
            )?;
            let threshold = select_threshold(&val_report.pr_curve)?;

            let test_path = r.dataset_path(&cell.dataset);
            let test_manifest = load_manifest(&test_path)?;
            let test_preds = detect_split(&ck.model, &test_manifest, &base_dir(&test_path), Some(cell.test_split))?;
            let test_file = pred_dir.join(format!("{}.{}.jsonl", cell.column, cell.test_split));
            write_predictions(&test_file, &test_preds)?;
            let report = evaluate_run(
                &test_file,
                &test_manifest,
                cell.test_split,
                &EvalConfig::new(spec.iou_threshold, threshold)?,
            )?;
            let out = CellReport {
                column: cell.column.clone(),
                model: cell.model.clone(),
                model_modality: ck.fingerprint.modality,
                dataset: cell.dataset.clone(),
                threshold_dataset: thr_name,
                threshold,
                predictions: format!("predictions/{}.{}.jsonl", cell.column, cell.test_split),
                report,
            };
            write_json(&cell_json, &out)
        })?;
        let text = std::fs::read_to_string(&cell_json).map_err(|e| Error::io(&cell_json, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Decode {
            path: cell_json.clone(),
            msg: e.to_string(),
        })
    };
    let cells = if !parallel_cells {
        spec.matrix.iter().map(run_cell).collect::<Result<Vec<_>>>()?
    } else {
        std::thread::scope(|s| {
        let handles: Vec<_> = spec.matrix.iter().map(|c| s.spawn(|| run_cell(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("matrix cell panicked"))
            .collect::<Result<Vec<_>>>()
        })?
    };


    let report = ExperimentReport {
        name: spec.name.clone(),
        seed: spec.seed,
        cells,
    };
    write_json(&out_dir.join("report.json"), &report)?;
    write_text(&out_dir.join("table1.md"), &table1_markdown(&report))?;
    write_text(&out_dir.join("table1.csv"), &table1_csv(&report))?;
    write_text(&out_dir.join("table2.md"), &table2_markdown(&report))?;
    write_text(&out_dir.join("table2.csv"), &table2_csv(&report))?;
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

const METRICS: [&str; 3] = ["Precision", "Recall", "F1"];

fn overall(c: &CellReport) -> [f64; 3] {
    [c.report.precision, c.report.recall, c.report.f1]
}

/// Rows Precision/Recall/F1, one column per matrix cell.
pub fn table1_markdown(r: &ExperimentReport) -> String {
    let mut s = String::new();
    let cols: Vec<&str> = r.cells.iter().map(|c| c.column.as_str()).collect();
    writeln!(s, "| | {} |", cols.join(" | ")).unwrap();
    writeln!(s, "|---|{}", "---|".repeat(cols.len())).unwrap();
    for (i, m) in METRICS.iter().enumerate() {
        let vals: Vec<String> = r.cells.iter().map(|c| format!("{:.3}", overall(c)[i])).collect();
        writeln!(s, "| {m} | {} |", vals.join(" | ")).unwrap();
    }
    s
}

pub fn table1_csv(r: &ExperimentReport) -> String {
    let mut s = String::from("metric");
    for c in &r.cells {
        write!(s, ",{}", c.column).unwrap();
    }
    s.push('\n');
    for (i, m) in METRICS.iter().enumerate() {
        s.push_str(m);
        for c in &r.cells {
            write!(s, ",{}", overall(c)[i]).unwrap();
        }
        s.push('\n');
    }
    s
}

fn class_rows(r: &ExperimentReport) -> Vec<(PolypClass, &'static str, Vec<Option<f64>>)> {
    let classes: BTreeSet<PolypClass> = r.cells.iter().flat_map(|c| c.report.per_class.keys().copied()).collect();
    let mut rows = Vec::new();
    for class in classes {
        for (i, m) in METRICS.iter().enumerate() {
            let vals = r
                .cells
                .iter()
                .map(|c| c.report.per_class.get(&class).map(|s| [s.precision, s.recall, s.f1][i]))
                .collect();
            rows.push((class, *m, vals));
        }
    }
    rows
}

/// Per-class Precision/Recall/F1, one column per matrix cell.
pub fn table2_markdown(r: &ExperimentReport) -> String {
    let mut s = String::new();
    let cols: Vec<&str> = r.cells.iter().map(|c| c.column.as_str()).collect();
    writeln!(s, "| class | metric | {} |", cols.join(" | ")).unwrap();
    writeln!(s, "|---|---|{}", "---|".repeat(cols.len())).unwrap();
    for (class, m, vals) in class_rows(r) {
        let v: Vec<String> = vals
            .iter()
            .map(|v| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}")))
            .collect();
        writeln!(s, "| {class} | {m} | {} |", v.join(" | ")).unwrap();
    }
    s
}

pub fn table2_csv(r: &ExperimentReport) -> String {
    let mut s = String::from("class,metric");
    for c in &r.cells {
        write!(s, ",{}", c.column).unwrap();
    }
    s.push('\n');
    for (class, m, vals) in class_rows(r) {
        write!(s, "{class},{m}").unwrap();
        for v in vals {
            match v {
                Some(x) => write!(s, ",{x}").unwrap(),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Annotation;

    fn spec_text() -> &'static str {
        r#"
name = "t"
[datasets.wli]
manifest = "a.jsonl"
[datasets.nbi]
manifest = "b.jsonl"
[datasets.snbi]
translate_from = "wli"
translator = "stages"
[[translator_stages]]
manifest = "c.jsonl"
[[detectors]]
name = "nbi"
dataset = "nbi"
[[matrix]]
column = "SNBIx"
model = "nbi"
dataset = "snbi"
"#
    }

    #[test]
    fn spec_parses_and_rebases() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        std::fs::write(&p, spec_text()).unwrap();
        let s = ExperimentSpec::load(&p).unwrap();
        assert_eq!(s.datasets["wli"].manifest.as_deref(), Some(dir.path().join("a.jsonl").as_path()));
        assert_eq!(s.matrix[0].test_split, Split::Test);
        assert_eq!(s.threshold_split, Split::Val);
    }

    #[test]
    fn references_are_checked() {
        let mut s: ExperimentSpec = toml::from_str(spec_text()).unwrap();
        s.validate().unwrap();
        let mut bad = s.clone();
        bad.matrix[0].model = "wli".into();
        assert!(bad.validate().is_err());
        let mut bad = s.clone();
        bad.datasets.get_mut("snbi").unwrap().translator = None;
        assert!(bad.validate().is_err());
        bad = s.clone();
        bad.translator_stages.clear();
        assert!(bad.validate().is_err());
        s.datasets.get_mut("snbi").unwrap().translator = Some("/some/ckpt".into());
        s.translator_stages.clear();
        s.validate().unwrap();
    }

    fn rec(id: &str, clip: &str, m: Modality) -> ImageRecord {
        ImageRecord {
            id: id.into(),
            path: format!("{id}.png").into(),
            modality: m,
            clip_id: clip.into(),
            width: 8,
            height: 8,
            annotations: vec![Annotation {
                bbox: crate::BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap(),
                class: PolypClass::Unknown,
            }],
            source_id: None,
        }
    }

    #[test]
    fn balancing_keeps_common_clip_frames() {
        let a = DatasetManifest::new(
            "a",
            vec![rec("w_c1_f000001", "c1", Modality::Wli), rec("w_c1_f000002", "c1", Modality::Wli), rec("w_c2_f000001", "c2", Modality::Wli)],
            BTreeMap::new(),
        )
        .unwrap();
        let b = DatasetManifest::new(
            "b",
            vec![rec("n_c1_f000002", "c1", Modality::Nbi), rec("n_c2_f000001", "c2", Modality::Nbi), rec("n_c3_f000001", "c3", Modality::Nbi)],
            BTreeMap::new(),
        )
        .unwrap();
        let out = balance_manifests(&[(a, "/d/a.jsonl".into()), (b, "/d/b.jsonl".into())]).unwrap();
        let ids = |m: &DatasetManifest| m.records().iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&out[0]), ["w_c1_f000002", "w_c2_f000001"]);
        assert_eq!(ids(&out[1]), ["n_c1_f000002", "n_c2_f000001"]);
        assert!(out[0].records()[0].path.is_absolute());
    }
}
