//! `snbi`: ingest, pair, translate, detect and evaluate from the shell.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use snbi_core::detector::{detect_split, train_detector, Detector, DetectorCheckpoint, DetectorConfig};
use snbi_core::eval::{
    evaluate_scenes, read_predictions, report_csv, report_markdown, scenes_for_split, select_threshold,
    write_predictions, EvalConfig, MetricsReport,
};
use snbi_core::experiment::{run_experiment_with, ExperimentSpec};
use snbi_core::figures::export_figures;
use snbi_core::ingest::{ingest_stills, ingest_videos, split_dataset, BlurThreshold, BoxFormat, IngestOptions};
use snbi_core::pairing::{build_semi_pairs, load_index, save_index};
use snbi_core::synth::{make_synthetic_dataset, SynthSpec};
use snbi_core::translator::{load_checkpoint, train, ImageSource, TrainState, Translator, TranslatorConfig};
use snbi_core::{load_manifest, save_manifest, DatasetManifest, Detection, Modality, PolypClass, Split};

#[derive(Parser, Debug)]
#[command(name = "snbi", version, about = "WLI to synthetic-NBI translation and polyp detection")]
struct Cli {
    /// Overrides the seed of every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Runs everything single-threaded. Results are identical either way;
    /// this only removes scheduling from the picture.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Base directory for relative output paths (and the image directory of
    /// `translate`, `figures` and `synth`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a manifest from videos plus masks, or from still images.
    Ingest(IngestArgs),
    /// Build the clip-level semi-pair index of a two-modality manifest.
    Pair {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train (or resume, or warm-start) the CycleGAN translator.
    TrainTranslator {
        /// TOML translator config; defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint directory; training resumes if it holds a checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Start from the networks of an earlier checkpoint.
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Translate the WLI records of a manifest to SNBI images.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "WLI")]
        modality: Modality,
        #[arg(long)]
        out_manifest: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    /// Train the reference detector.
    TrainDetector {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "train")]
        train_split: Split,
        #[arg(long, default_value = "val")]
        val_split: Split,
    },
    /// Write predictions of a detector checkpoint.
    Detect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Only this split; every record when absent.
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against a manifest split.
    Evaluate(EvaluateArgs),
    /// Declarative experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Triptychs and detection overlays for chosen images.
    Figures {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated record ids.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        #[arg(long)]
        translator: Option<PathBuf>,
        /// `name=checkpoint-dir`, repeatable.
        #[arg(long = "detector", value_parser = parse_kv::<PathBuf>)]
        detectors: Vec<(String, PathBuf)>,
        /// Detections below this confidence are not drawn.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Generate the two-domain synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 64)]
        size: u32,
        #[arg(long, default_value_t = 4)]
        clips: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        min_targets: usize,
        #[arg(long, default_value_t = 2)]
        max_targets: usize,
        #[arg(long, default_value_t = 0.0)]
        empty_fraction: f64,
        /// Clip-level split fractions, e.g. `train=0.6,val=0.2,test=0.2`.
        #[arg(long, value_delimiter = ',', value_parser = parse_kv::<f64>)]
        split: Vec<(String, f64)>,
    },
}

#[derive(Subcommand, Debug)]
enum ExperimentCommand {
    /// Run (or resume) every stage of an experiment spec.
    Run {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Directory of videos (animated GIFs or frame directories).
    #[arg(long, conflicts_with = "images", required_unless_present = "images")]
    videos: Option<PathBuf>,
    /// Directory of still images.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Box file for still images: `image,a,b,c,d[,class]` with a header.
    #[arg(long, requires = "images")]
    boxes: Option<PathBuf>,
    #[arg(long, default_value = "corners")]
    box_format: BoxFormat,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// A number, or `auto`. No blur filtering when absent.
    #[arg(long)]
    blur_threshold: Option<String>,
    /// Crop dark borders.
    #[arg(long)]
    crop: bool,
    #[arg(long, default_value = "WLI")]
    modality: Modality,
    /// `clip=class`, repeatable.
    #[arg(long = "clip-class", value_parser = parse_kv::<PolypClass>)]
    clip_classes: Vec<(String, PolypClass)>,
    /// Clip-level split fractions, e.g. `train=0.7,val=0.15,test=0.15`.
    #[arg(long, value_delimiter = ',', value_parser = parse_kv::<f64>)]
    split: Vec<(String, f64)>,
    #[arg(long)]
    name: Option<String>,
    /// Output manifest; images are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, conflicts_with = "auto_threshold_from", required_unless_present = "auto_threshold_from")]
    threshold: Option<f64>,
    /// Pick the max-F1 threshold on this split's predictions.
    #[arg(long)]
    auto_threshold_from: Option<Split>,
    /// Predictions for the threshold split, if not in `--predictions`.
    #[arg(long, requires = "auto_threshold_from")]
    threshold_predictions: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Full report, including the PR curve, as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn parse_kv<T: std::str::FromStr>(s: &str) -> Result<(String, T), String>
where
    T::Err: std::fmt::Display,
{
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v = v.trim().parse().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn split_fractions(pairs: &[(String, f64)]) -> Result<BTreeMap<Split, f64>> {
    pairs
        .iter()
        .map(|(k, v)| Ok((k.parse::<Split>()?, *v)))
        .collect()
}

struct Ctx {
    seed: Option<u64>,
    deterministic: bool,
    out_dir: Option<PathBuf>,
}

impl Ctx {
    fn out(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out_dir.as_deref().context("this command needs --out-dir")
    }
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().unwrap_or_else(|| Path::new(".")).to_path_buf()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<()> {
    let out = ctx.out(&a.out);
    let out_dir = base_dir(&out);
    let blur = match a.blur_threshold.as_deref() {
        None => None,
        Some("auto") => Some(BlurThreshold::Auto),
        Some(t) => Some(BlurThreshold::Fixed(t.parse().with_context(|| format!("blur threshold `{t}`"))?)),
    };
    let opts = IngestOptions {
        modality: a.modality,
        blur,
        crop: a.crop.then_some((
            snbi_core::ingest::crop::DEFAULT_INTENSITY_THRESHOLD,
            snbi_core::ingest::crop::DEFAULT_MIN_FRACTION,
        )),
        clip_classes: a.clip_classes.into_iter().collect(),
        ..IngestOptions::default()
    };
    let name = a.name.unwrap_or_else(|| {
        out.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned())
    });
    let report = match (&a.videos, &a.images) {
        (Some(v), _) => ingest_videos(&name, v, a.masks.as_deref(), a.stride, &opts, &out_dir)?,
        (None, Some(i)) => ingest_stills(
            &name,
            i,
            a.boxes.as_deref().map(|b| (b, a.box_format)),
            a.masks.as_deref(),
            &opts,
            &out_dir,
        )?,
        (None, None) => bail!("one of --videos and --images is required"),
    };
    for id in &report.blurry {
        info!("dropped blurry frame {id}");
    }
    for (id, e) in &report.unreadable {
        warn!("skipped unreadable image {id}: {e}");
    }
    for (id, w) in &report.crop_warnings {
        warn!("crop fallback for {id}: {w:?}");
    }
    let mut manifest = report.manifest;
    if !a.split.is_empty() {
        manifest = split_dataset(&manifest, &split_fractions(&a.split)?, ctx.seed.unwrap_or(0))?;
    }
    save_manifest(&manifest, &out)?;
    println!(
        "{} records ({} blurry dropped, {} unreadable) -> {}",
        manifest.records().len(),
        report.blurry.len(),
        report.unreadable.len(),
        out.display()
    );
    Ok(())
}

fn train_translator(
    ctx: &Ctx,
    config: Option<PathBuf>,
    index: PathBuf,
    manifest_path: PathBuf,
    out: PathBuf,
    warm: Option<PathBuf>,
) -> Result<()> {
    let out = ctx.out(&out);
    let mut cfg = match &config {
        Some(p) => TranslatorConfig::load(p)?,
        None => TranslatorConfig::default(),
    };
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let manifest = load_manifest(&manifest_path)?;
    let build = load_index(&index)?;
    build.index.check_against(&manifest)?;
    let state = if out.join("state.json").exists() {
        info!("resuming from {}", out.display());
        load_checkpoint(&out)?
    } else if let Some(w) = warm {
        TrainState::warm_start(load_checkpoint(&w)?, cfg)?
    } else {
        TrainState::new(cfg)?
    };
    let mut images = ImageSource::new(&manifest, &base_dir(&manifest_path), state.config.image_size);
    let state = train(state, &build.index, &mut images, &out)?;
    if let Some(last) = state.history.last() {
        println!(
            "epoch {} step {}: total {:.4} (gan_G {:.4}, gan_F {:.4}, cyc {:.4})",
            last.epoch, last.step, last.total, last.gan_g, last.gan_f, last.cyc
        );
    }
    Ok(())
}

/// Rewrites record paths so they resolve from `manifest_path`'s directory.
fn rebase_records(m: DatasetManifest, images_dir: &Path, manifest_path: &Path) -> Result<DatasetManifest> {
    let same = std::path::absolute(images_dir)? == std::path::absolute(base_dir(manifest_path))?;
    if same {
        return Ok(m);
    }
    let (name, labeled, records, splits) = m.into_parts();
    let records = records
        .into_iter()
        .map(|mut r| {
            r.path = std::path::absolute(images_dir.join(&r.path))?;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest::with_class_labels(name, labeled, records, splits)?)
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    // A predictions file may cover several splits; evaluate only the
    // requested one, but unknown ids are still errors.
    let for_split = |path: &Path, split: Split| -> Result<BTreeMap<String, Vec<Detection>>> {
        let all = read_predictions(path)?;
        Ok(all
            .into_iter()
            .filter(|(id, _)| manifest.split_of(id).is_none_or(|s| s == split))
            .collect())
    };
    let threshold = match (a.threshold, a.auto_threshold_from) {
        (Some(t), _) => t,
        (None, Some(split)) => {
            let path = a.threshold_predictions.as_deref().unwrap_or(&a.predictions);
            let scenes = scenes_for_split(&for_split(path, split)?, &manifest, split)?;
            let r = evaluate_scenes(&scenes, &EvalConfig::new(a.iou, 0.0)?)?;
            let t = select_threshold(&r.pr_curve)?;
            info!("threshold {t} selected on {split}");
            t
        }
        (None, None) => bail!("one of --threshold and --auto-threshold-from is required"),
    };
    let scenes = scenes_for_split(&for_split(&a.predictions, a.split)?, &manifest, a.split)?;
    let report: MetricsReport = evaluate_scenes(&scenes, &EvalConfig::new(a.iou, threshold)?)?;
    let md = report_markdown(&report);
    print!("{md}");
    if let Some(p) = &a.report {
        write_text(&ctx.out(p), &md)?;
    }
    if let Some(p) = &a.csv {
        write_text(&ctx.out(p), &report_csv(&report))?;
    }
    if let Some(p) = &a.json {
        write_text(&ctx.out(p), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        deterministic: cli.deterministic,
        out_dir: cli.out_dir,
    };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a)?,
        Command::Pair { manifest, out } => {
            let m = load_manifest(&manifest)?;
            let build = build_semi_pairs(&m)?;
            for c in &build.excluded_clips {
                warn!("clip {c} lacks one modality; excluded from pairing");
            }
            let out = ctx.out(&out);
            save_index(&build, m.name(), &out)?;
            println!(
                "{} clips, {} WLI frames -> {}",
                build.index.clips().len(),
                build.index.wli_count(),
                out.display()
            );
        }
        Command::TrainTranslator {
            config,
            index,
            manifest,
            out,
            warm_start,
        } => train_translator(&ctx, config, index, manifest, out, warm_start)?,
        Command::Translate {
            ckpt,
            manifest,
            modality,
            out_manifest,
            name,
        } => {
            if modality != Modality::Wli {
                bail!("only WLI records can be translated, got {modality}");
            }
            let images_dir = ctx.out_dir()?.to_path_buf();
            let translator = Translator::load(&ckpt)?;
            let src = load_manifest(&manifest)?;
            let name = name.unwrap_or_else(|| format!("{}-snbi", src.name()));
            let m = translator.translate_manifest(&src, &base_dir(&manifest), &images_dir, &name)?;
            let out_manifest = ctx.out(&out_manifest);
            let m = rebase_records(m, &images_dir, &out_manifest)?;
            save_manifest(&m, &out_manifest)?;
            println!("{} SNBI images -> {}", m.records().len(), images_dir.display());
        }
        Command::TrainDetector {
            config,
            manifest,
            out,
            train_split,
            val_split,
        } => {
            let mut cfg = match &config {
                Some(p) => DetectorConfig::load(p)?,
                None => DetectorConfig::default(),
            };
            if let Some(s) = ctx.seed {
                cfg.seed = s;
            }
            let m = load_manifest(&manifest)?;
            let ck = train_detector(cfg, &m, &base_dir(&manifest), train_split, val_split)?;
            let out = ctx.out(&out);
            ck.save(&out)?;
            let best = &ck.history[ck.best_epoch];
            println!(
                "best epoch {} (val F1 {}) -> {}",
                best.epoch,
                best.val_f1.map_or("n/a".into(), |f| format!("{f:.4}")),
                out.display()
            );
        }
        Command::Detect {
            ckpt,
            manifest,
            split,
            out,
        } => {
            let ck = DetectorCheckpoint::load(&ckpt)?;
            let m = load_manifest(&manifest)?;
            // Allowed (it is how cross-evaluation cells are made) but worth a note.
            if m.records().iter().any(|r| r.modality != ck.fingerprint.modality) {
                info!("model trained on {} applied to other modalities", ck.fingerprint.modality);
            }
            let preds = detect_split(&ck.model, &m, &base_dir(&manifest), split)?;
            let out = ctx.out(&out);
            write_predictions(&out, &preds)?;
            println!("{} images -> {}", preds.len(), out.display());
        }
        Command::Evaluate(a) => evaluate(&ctx, a)?,
        Command::Experiment(ExperimentCommand::Run { spec }) => {
            let mut s = ExperimentSpec::load(&spec)?;
            if let Some(seed) = ctx.seed {
                s.seed = seed;
            }
            let out = match (&ctx.out_dir, &s.output_dir) {
                (Some(d), _) => d.clone(),
                (None, Some(d)) => d.clone(),
                (None, None) => base_dir(&spec).join("runs").join(&s.name),
            };
            let report = run_experiment_with(&s, &out, !ctx.deterministic)?;
            print!("{}", snbi_core::experiment::table1_markdown(&report));
            println!("report -> {}", out.join("report.json").display());
        }
        Command::Figures {
            manifest,
            ids,
            translator,
            detectors,
            threshold,
        } => {
            let m = load_manifest(&manifest)?;
            let translator = translator.as_deref().map(Translator::load).transpose()?;
            let loaded = detectors
                .iter()
                .map(|(n, p)| Ok((n.clone(), DetectorCheckpoint::load(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let dets: Vec<(String, &dyn Detector)> =
                loaded.iter().map(|(n, c)| (n.clone(), &c.model as &dyn Detector)).collect();
            let out = export_figures(&m, &base_dir(&manifest), translator.as_ref(), &dets, threshold, &ids, ctx.out_dir()?)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for f in &out.files {
                println!("{}", f.display());
            }
        }
        Command::Synth {
            size,
            clips,
            frames,
            min_targets,
            max_targets,
            empty_fraction,
            split,
        } => {
            let spec = SynthSpec {
                size,
                n_clips: clips,
                frames_per_clip: frames,
                min_targets,
                max_targets,
                seed: ctx.seed.unwrap_or(0),
                empty_fraction,
                splits: split_fractions(&split)?,
            };
            let dir = ctx.out_dir()?;
            let ds = make_synthetic_dataset(&spec, dir)?;
            println!(
                "{} + {} records -> {}",
                ds.domain_a.records().len(),
                ds.domain_b.records().len(),
                dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
