use std::path::Path;
use std::process::{Command, Output};

use image::{GrayImage, RgbImage};
use snbi_core::eval::{evaluate_run, EvalConfig};
use snbi_core::experiment::ExperimentReport;
use snbi_core::ingest::encode_gif;
use snbi_core::{load_manifest, Modality, Split};

fn snbi(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_snbi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    out
}

fn ok(args: &[&str]) -> String {
    let out = snbi(args);
    assert!(
        out.status.success(),
        "snbi {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_row<'a>(csv: &'a str, class: &str) -> Vec<&'a str> {
    csv.lines()
        .find(|l| l.starts_with(&format!("{class},")))
        .unwrap()
        .split(',')
        .collect()
}

const TRANSLATOR: &str = "image_size = 32\nngf = 8\nndf = 8\nn_residual = 1\nconstant_epochs = 1\niterations_per_epoch = 10\npool_size = 4\n";
const DETECTOR: &str =
    "image_size = 32\nepochs = 3\nwidth = 8\ndownsamplings = 2\nbase_lr = 0.002\nanchor_scales = [0.2, 0.35]\n";

#[test]
fn stepwise_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&[
        "synth", "--size", "32", "--clips", "5", "--frames", "4", "--split", "train=0.6,val=0.2,test=0.2",
        "--seed", "3", "--out-dir", p(&data),
    ]);
    std::fs::write(d.join("t.toml"), TRANSLATOR).unwrap();
    std::fs::write(d.join("d.toml"), DETECTOR).unwrap();

    ok(&["pair", "--manifest", p(&data.join("combined.jsonl")), "--out", p(&d.join("pairs.jsonl"))]);
    ok(&[
        "train-translator", "--config", p(&d.join("t.toml")), "--index", p(&d.join("pairs.jsonl")),
        "--manifest", p(&data.join("combined.jsonl")), "--out", p(&d.join("gan")),
    ]);
    for f in ["G.params", "F.params", "D_X.params", "D_Y.params", "config.toml", "loss_history.csv"] {
        assert!(d.join("gan").join(f).exists(), "{f}");
    }
    ok(&[
        "translate", "--ckpt", p(&d.join("gan")), "--manifest", p(&data.join("domain_a.jsonl")),
        "--modality", "WLI", "--out-dir", p(&d.join("snbi_images")), "--out-manifest", p(&d.join("snbi.jsonl")),
    ]);
    let snbi_m = load_manifest(d.join("snbi.jsonl")).unwrap();
    assert_eq!(snbi_m.records().len(), 20);
    assert!(snbi_m.records().iter().all(|r| r.modality == Modality::Snbi && r.path.is_absolute()));

    ok(&[
        "train-detector", "--config", p(&d.join("d.toml")), "--manifest", p(&data.join("domain_b.jsonl")),
        "--out", p(&d.join("det")),
    ]);
    ok(&[
        "detect", "--ckpt", p(&d.join("det")), "--manifest", p(&d.join("snbi.jsonl")), "--out", p(&d.join("preds.jsonl")),
    ]);

    // Threshold chosen on val from the same (all-split) predictions file.
    ok(&[
        "evaluate", "--predictions", p(&d.join("preds.jsonl")), "--manifest", p(&d.join("snbi.jsonl")),
        "--split", "test", "--auto-threshold-from", "val", "--report", p(&d.join("r.md")), "--csv", p(&d.join("r.csv")),
        "--json", p(&d.join("r.json")),
    ]);
    let md = std::fs::read_to_string(d.join("r.md")).unwrap();
    assert!(md.contains("| class | TP | FP | FN | Precision | Recall | F1 |"));
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    let row = csv_row(&csv, "all");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(row[6].parse::<f64>().unwrap(), json["f1"].as_f64().unwrap());

    let bad = snbi(&["evaluate", "--predictions", p(&d.join("preds.jsonl")), "--manifest", p(&d.join("snbi.jsonl"))]);
    assert!(!bad.status.success());

    ok(&[
        "figures", "--manifest", p(&data.join("combined.jsonl")), "--ids", "wli_clip000_f000000",
        "--translator", p(&d.join("gan")), "--detector", &format!("nbi={}", p(&d.join("det"))), "--out-dir", p(&d.join("fig")),
    ]);
    assert!(d.join("fig/triptych_wli_clip000_f000000.png").exists());
    assert!(d.join("fig/overlay_nbi_wli_clip000_f000000.png").exists());
}

#[test]
fn matrix_cells_match_independent_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "synth", "--size", "32", "--clips", "5", "--frames", "4", "--split", "train=0.6,val=0.2,test=0.2",
        "--out-dir", p(&d.join("data")),
    ]);
    let det = DETECTOR;
    let spec = format!(
        r#"name = "m"
seed = 2
[[translator_stages]]
manifest = "data/combined.jsonl"
[translator_stages.config]
{TRANSLATOR}
[datasets.wli]
manifest = "data/domain_a.jsonl"
[datasets.nbi]
manifest = "data/domain_b.jsonl"
[datasets.snbi]
translate_from = "wli"
translator = "stages"
[[detectors]]
name = "nbi"
dataset = "nbi"
[detectors.config]
{det}
[[detectors]]
name = "snbi"
dataset = "snbi"
[detectors.config]
{det}
[[matrix]]
column = "NBI"
model = "nbi"
dataset = "nbi"
[[matrix]]
column = "SNBI"
model = "snbi"
dataset = "snbi"
[[matrix]]
column = "SNBIx"
model = "nbi"
dataset = "snbi"
"#
    );
    std::fs::write(d.join("exp.toml"), spec).unwrap();
    let out = d.join("run");
    let stdout = ok(&["experiment", "run", "--spec", p(&d.join("exp.toml")), "--out-dir", p(&out), "--deterministic"]);
    assert!(stdout.contains("| | NBI | SNBI | SNBIx |"), "{stdout}");
    let report: ExperimentReport =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 3);

    for cell in &report.cells {
        let manifest_path = if cell.dataset == "snbi" {
            out.join("datasets/snbi/manifest.jsonl")
        } else {
            d.join("data/domain_b.jsonl")
        };
        let preds = out.join(&cell.predictions);
        let csv_path = d.join(format!("{}.csv", cell.column));
        ok(&[
            "evaluate", "--predictions", p(&preds), "--manifest", p(&manifest_path), "--split", "test",
            "--threshold", &cell.threshold.to_string(), "--csv", p(&csv_path),
        ]);
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        let row = csv_row(&csv, "all");
        let got: Vec<f64> = row[4..7].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(got, [cell.report.precision, cell.report.recall, cell.report.f1], "{}", cell.column);
        let counts: Vec<u64> = row[1..4].iter().map(|v| v.parse().unwrap()).collect();
        let c = cell.report.counts;
        assert_eq!(counts, [c.tp, c.fp, c.fn_]);

        // Same numbers from the library directly.
        let m = load_manifest(&manifest_path).unwrap();
        let direct = evaluate_run(&preds, &m, Split::Test, &EvalConfig::new(0.5, cell.threshold).unwrap()).unwrap();
        assert_eq!(direct, cell.report);
    }
    // The cross cell uses the NBI model's threshold picked on NBI validation.
    assert_eq!(report.cells[2].threshold, report.cells[0].threshold);
    assert_eq!(report.cells[2].threshold_dataset, "nbi");
}

#[test]
fn ingest_videos_with_masks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir_all(d.join("videos")).unwrap();
    for clip in ["a", "b"] {
        std::fs::create_dir_all(d.join("masks").join(clip)).unwrap();
        let frames: Vec<RgbImage> = (0..4)
            .map(|_| {
                RgbImage::from_fn(32, 32, |x, y| {
                    let v = if (x / 2 + y / 2) % 2 == 0 { 50 } else { 210 };
                    image::Rgb([v, v / 2, v / 3])
                })
            })
            .collect();
        encode_gif(&frames, &d.join("videos").join(format!("{clip}.gif"))).unwrap();
        let mut m = GrayImage::new(32, 32);
        for y in 4..14 {
            for x in 6..20 {
                m.put_pixel(x, y, image::Luma([255]));
            }
        }
        m.save(d.join("masks").join(clip).join("0.png")).unwrap();
    }
    let stdout = ok(&[
        "ingest", "--videos", p(&d.join("videos")), "--masks", p(&d.join("masks")), "--stride", "2",
        "--blur-threshold", "1.0", "--clip-class", "a=adenoma", "--split", "train=0.5,test=0.5",
        "--out", "m.jsonl", "--out-dir", p(&d.join("out")),
    ]);
    assert!(stdout.starts_with("4 records"), "{stdout}");
    let m = load_manifest(d.join("out/m.jsonl")).unwrap();
    assert_eq!(m.records().len(), 4);
    for r in m.records() {
        assert_eq!(r.annotations.len(), 1);
        assert_eq!(r.annotations[0].bbox, snbi_core::BoundingBox::new(6.0, 4.0, 20.0, 14.0).unwrap());
        assert!(d.join("out").join(&r.path).exists());
        assert!(m.split_of(&r.id).is_some());
    }
    let classes: Vec<_> = m.records().iter().map(|r| r.annotations[0].class.to_string()).collect();
    assert_eq!(classes, ["adenoma", "adenoma", "unknown", "unknown"]);
}
