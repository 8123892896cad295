//! Command-line front door: corpus synthesis, training, fine-tuning,
//! detection, evaluation, threshold sweeps, rendering and the gradient
//! self-check.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 failed gradient
//! check. Every run echoes its resolved configuration; all file outputs
//! are written atomically (temp + rename).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use docdet::data::render::{render_annotations, render_detections};
use docdet::data::synth::{synth_page, SynthConfig};
use docdet::data::{
    load_documents, load_manifest, png_io, split, AnnotatedDocument, DataError, DatasetManifest,
    ManifestBox, ManifestEntry,
};
use docdet::detector::train::{fine_tune, train, EpochStats, TrainOptions};
use docdet::detector::{
    detect, BackboneConfig, DetectorModel, MatchConfig, ModelSpec, RoiConfig, RoiMode,
};
use docdet::eval::{evaluate_at, threshold_sweep, EvalReport, GroundTruthSet, PredictionSet};
use docdet::geometry::{AnchorConfig, BBox, LabelSet, ScoredBox};
use docdet::numerics::TrainHyperparams;
use docdet::write_atomic;

#[derive(Parser)]
#[command(name = "docdet", version, about = "Graphical-object detection for document images")]
struct Cli {
    /// Plain-text key=value config file; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-image fan-out.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic page corpus with exact ground truth.
    Synth(SynthArgs),
    /// Train a detector from scratch.
    Train(TrainArgs),
    /// Continue training from a checkpoint (transfer learning).
    Finetune(FinetuneArgs),
    /// Run a trained detector over images.
    Detect(DetectArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Evaluate across several IoU thresholds.
    Sweep(SweepArgs),
    /// Draw ground truth or predictions onto pages.
    Render(RenderArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (images/ plus manifest.json).
    #[arg(long)]
    out: PathBuf,
    /// Number of pages.
    #[arg(long)]
    count: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Style preset: base | shifted.
    #[arg(long)]
    preset: Option<String>,
    /// Also split into manifest_train.json / manifest_test.json.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Dataset name recorded in the manifest.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Clone)]
struct TrainCommon {
    /// Training manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for checkpoints, model spec and loss trace.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    /// Backbone preset: tiny | small.
    #[arg(long)]
    backbone: Option<String>,
    /// Anchor side lengths in input pixels, comma separated.
    #[arg(long)]
    anchor_scales: Option<String>,
    /// Anchor height/width ratios, comma separated.
    #[arg(long)]
    anchor_ratios: Option<String>,
    /// RoI extraction: align | pool.
    #[arg(long)]
    roi_mode: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: TrainCommon,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: TrainCommon,
    /// Checkpoint to start from.
    #[arg(long)]
    init: PathBuf,
    /// Model spec JSON of the source checkpoint (default: model.json
    /// next to it).
    #[arg(long)]
    init_spec: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Model spec JSON (default: model.json next to the checkpoint).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Manifest naming the images to run on.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Single image file (id = file stem); may repeat.
    #[arg(long)]
    image: Vec<PathBuf>,
    /// Output predictions, one JSON record per line.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    score_threshold: Option<f64>,
    #[arg(long)]
    nms_threshold: Option<f64>,
    /// Write annotated copies of each page here.
    #[arg(long)]
    render_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Ground-truth manifest.
    #[arg(long)]
    gt: PathBuf,
    /// Predictions file (JSON lines from `detect`).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    iou: Option<f64>,
    #[arg(long)]
    score_cutoff: Option<f64>,
    /// Machine-readable report destination (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Ascending IoU thresholds, comma separated.
    #[arg(long)]
    iou: Option<String>,
    /// Directory for per-threshold JSON reports.
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Predictions to draw; omitted means draw the ground truth.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Exit discipline: usage errors 1, data errors 2, failed gradcheck 3.
enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Gradcheck,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successes; everything else is a usage error
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = match cli.config.as_deref().map(read_config).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let jobs = cli.jobs.or_else(|| config.get_parse("jobs")).unwrap_or(2);
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .ok();
    println!("config.jobs = {jobs}");

    let result = match cli.cmd {
        Command::Synth(args) => run_synth(args, &config),
        Command::Train(args) => run_train(args, &config),
        Command::Finetune(args) => run_finetune(args, &config),
        Command::Detect(args) => run_detect(args, &config),
        Command::Evaluate(args) => run_evaluate(args, &config),
        Command::Sweep(args) => run_sweep(args, &config),
        Command::Render(args) => run_render(args),
        Command::Gradcheck => run_gradcheck(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Gradcheck) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(3)
        }
    }
}

/// Plain-text `key = value` settings, `#` comments allowed.
#[derive(Default)]
struct KvConfig(BTreeMap<String, String>);

impl KvConfig {
    fn get_parse<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.0.get(key).and_then(|v| v.parse().ok())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

fn read_config(path: &Path) -> anyhow::Result<KvConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), lineno + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(KvConfig(map))
}

fn parse_csv_f64(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("not a number: {t:?}")))
        })
        .collect()
}

fn echo(key: &str, value: impl std::fmt::Display) {
    println!("config.{key} = {value}");
}

// ---------------------------------------------------------------- synth

fn run_synth(args: SynthArgs, cfg: &KvConfig) -> Result<(), Failure> {
    let count = args.count.or_else(|| cfg.get_parse("count")).unwrap_or(100);
    let seed = args.seed.or_else(|| cfg.get_parse("seed")).unwrap_or(0);
    let preset = args
        .preset
        .or_else(|| cfg.get("preset").map(String::from))
        .unwrap_or_else(|| "base".into());
    let name = args.name.unwrap_or_else(|| format!("synth-{preset}-{seed}"));
    let synth_cfg = match preset.as_str() {
        "base" => SynthConfig::base(seed),
        "shifted" => SynthConfig::shifted(seed),
        other => return Err(Failure::Usage(format!("unknown preset {other:?}"))),
    };
    echo("count", count);
    echo("seed", seed);
    echo("preset", &preset);
    echo("out", args.out.display());

    let images_dir = args.out.join("images");
    std::fs::create_dir_all(&images_dir)
        .map_err(|e| Failure::Data(anyhow!("creating {}: {e}", images_dir.display())))?;

    let labels = LabelSet::graphical();
    let pages: Vec<AnnotatedDocument> = (0..count)
        .into_par_iter()
        .map(|i| synth_page(&synth_cfg, i))
        .collect::<Result<_, _>>()?;

    let mut manifest = DatasetManifest::new(name, &labels);
    for page in &pages {
        let rel = format!("images/{}.png", page.id);
        png_io::save_png(&args.out.join(&rel), &page.image)?;
        manifest.entries.push(ManifestEntry {
            id: page.id.clone(),
            image: rel,
            boxes: page
                .annotations
                .iter()
                .map(|a| ManifestBox {
                    label: labels.name(a.label).unwrap_or("?").to_string(),
                    x_min: a.bbox.x_min,
                    y_min: a.bbox.y_min,
                    x_max: a.bbox.x_max,
                    y_max: a.bbox.y_max,
                })
                .collect(),
        });
    }
    manifest.save(&args.out.join("manifest.json"))?;
    println!("wrote {} pages to {}", pages.len(), args.out.display());

    if let Some(fraction) = args.train_fraction {
        let (tr, te) = split(&manifest, fraction, seed)?;
        tr.save(&args.out.join("manifest_train.json"))?;
        te.save(&args.out.join("manifest_test.json"))?;
        println!(
            "split {} train / {} test (fraction {fraction})",
            tr.entries.len(),
            te.entries.len()
        );
    }
    Ok(())
}

// ------------------------------------------------------- train/finetune

struct ResolvedTrain {
    docs: Vec<AnnotatedDocument>,
    labels: LabelSet,
    opts: TrainOptions,
    backbone: BackboneConfig,
    anchors: AnchorConfig,
    roi: RoiConfig,
    out: PathBuf,
}

fn resolve_train(common: &TrainCommon, cfg: &KvConfig) -> Result<ResolvedTrain, Failure> {
    let seed = common.seed.or_else(|| cfg.get_parse("seed")).unwrap_or(0);
    let epochs = common.epochs.or_else(|| cfg.get_parse("epochs")).unwrap_or(10);
    let lr = common.lr.or_else(|| cfg.get_parse("lr")).unwrap_or(0.001);
    let batch_size = common
        .batch_size
        .or_else(|| cfg.get_parse("batch_size"))
        .unwrap_or(4);
    let decay_factor = common
        .decay_factor
        .or_else(|| cfg.get_parse("decay_factor"))
        .unwrap_or(0.1);
    let decay_every = common
        .decay_every
        .or_else(|| cfg.get_parse("decay_every"))
        .unwrap_or(5);
    let backbone_name = common
        .backbone
        .clone()
        .or_else(|| cfg.get("backbone").map(String::from))
        .unwrap_or_else(|| "tiny".into());
    let backbone = BackboneConfig::preset(&backbone_name)
        .ok_or_else(|| Failure::Usage(format!("unknown backbone preset {backbone_name:?}")))?;

    let scales = match &common.anchor_scales {
        Some(s) => parse_csv_f64(s)?,
        None => AnchorConfig::reference().scales().to_vec(),
    };
    let ratios = match &common.anchor_ratios {
        Some(s) => parse_csv_f64(s)?,
        None => AnchorConfig::reference().ratios().to_vec(),
    };
    let anchors = AnchorConfig::new(scales, ratios, backbone.total_stride())
        .map_err(|e| Failure::Usage(e.to_string()))?;

    let roi_mode = common
        .roi_mode
        .clone()
        .or_else(|| cfg.get("roi_mode").map(String::from))
        .unwrap_or_else(|| "align".into());
    let roi = RoiConfig {
        mode: match roi_mode.as_str() {
            "align" => RoiMode::Align,
            "pool" => RoiMode::Pool,
            other => return Err(Failure::Usage(format!("unknown roi mode {other:?}"))),
        },
        ..RoiConfig::default()
    };

    echo("manifest", common.manifest.display());
    echo("out", common.out.display());
    echo("seed", seed);
    echo("epochs", epochs);
    echo("lr", lr);
    echo("batch_size", batch_size);
    echo("decay_factor", decay_factor);
    echo("decay_every", decay_every);
    echo("backbone", &backbone_name);
    echo("roi_mode", &roi_mode);
    echo(
        "anchor_scales",
        anchors
            .scales()
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    echo(
        "anchor_ratios",
        anchors
            .ratios()
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );

    let loaded = load_manifest(&common.manifest)?;
    if loaded.clip_warnings > 0 {
        eprintln!(
            "warning: {} ground-truth boxes clipped to image bounds",
            loaded.clip_warnings
        );
    }
    let labels = loaded.manifest.label_set();
    let docs = load_documents(&loaded.manifest, &loaded.root)?;

    let opts = TrainOptions {
        hp: TrainHyperparams {
            learning_rate: lr,
            decay_factor,
            decay_every_epochs: decay_every,
            batch_size,
        },
        epochs,
        match_cfg: MatchConfig::default(),
        proposal_cfg: TrainOptions::default().proposal_cfg,
        seed,
        checkpoint_dir: Some(common.out.clone()),
    };
    Ok(ResolvedTrain { docs, labels, opts, backbone, anchors, roi, out: common.out.clone() })
}

fn write_trace(path: &Path, trace: &[EpochStats]) -> Result<(), Failure> {
    let mut csv = String::from("epoch,lr,rpn_cls,rpn_reg,head_cls,head_reg,total\n");
    for t in trace {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            t.epoch, t.lr, t.rpn_cls, t.rpn_reg, t.head_cls, t.head_reg, t.total
        ));
    }
    write_atomic(path, csv.as_bytes())
        .map_err(|e| Failure::Data(anyhow!("writing {}: {e}", path.display())))
}

fn finish_training(
    model: &DetectorModel,
    trace: &[EpochStats],
    out: &Path,
) -> Result<(), Failure> {
    model
        .save_checkpoint(&out.join("final.ckpt"))
        .map_err(|e| Failure::Data(e.into()))?;
    let spec = ModelSpec::of(model);
    write_atomic(
        &out.join("model.json"),
        serde_json::to_string_pretty(&spec).expect("spec serializes").as_bytes(),
    )
    .map_err(|e| Failure::Data(anyhow!("writing model.json: {e}")))?;
    write_trace(&out.join("trace.csv"), trace)?;
    if let Some(last) = trace.last() {
        println!(
            "final: epoch {} lr {} total loss {:.4}",
            last.epoch, last.lr, last.total
        );
    }
    println!("checkpoint: {}", out.join("final.ckpt").display());
    Ok(())
}

fn run_train(args: TrainArgs, cfg: &KvConfig) -> Result<(), Failure> {
    let r = resolve_train(&args.common, cfg)?;
    let mut model = DetectorModel::new(r.backbone, r.anchors, r.roi, r.labels, r.opts.seed)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let trace = train(&mut model, &r.docs, &r.opts).map_err(|e| Failure::Data(e.into()))?;
    finish_training(&model, &trace, &r.out)
}

fn run_finetune(args: FinetuneArgs, cfg: &KvConfig) -> Result<(), Failure> {
    let r = resolve_train(&args.common, cfg)?;
    echo("init", args.init.display());
    let spec_path = args
        .init_spec
        .clone()
        .unwrap_or_else(|| args.init.with_file_name("model.json"));
    // architecture comes from the source spec; the label set (and with it
    // the head widths) from the new manifest
    let spec: ModelSpec = serde_json::from_str(
        &std::fs::read_to_string(&spec_path)
            .map_err(|e| Failure::Data(anyhow!("reading {}: {e}", spec_path.display())))?,
    )
    .map_err(|e| Failure::Data(anyhow!("parsing {}: {e}", spec_path.display())))?;
    let mut model =
        DetectorModel::new(spec.backbone, spec.anchors, spec.roi, r.labels, r.opts.seed)
            .map_err(|e| Failure::Usage(e.to_string()))?;
    let (trace, head_reinit) =
        fine_tune(&mut model, &args.init, &r.docs, &r.opts).map_err(|e| Failure::Data(e.into()))?;
    if head_reinit {
        println!("note: head reinitialized (label set differs from checkpoint)");
    }
    finish_training(&model, &trace, &r.out)
}

// --------------------------------------------------------------- detect

#[derive(Serialize, Deserialize)]
struct PredRecord {
    image_id: String,
    label: String,
    score: f64,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

fn load_model(ckpt: &Path, spec_path: Option<&Path>) -> Result<DetectorModel, Failure> {
    let spec_path = spec_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ckpt.with_file_name("model.json"));
    let spec: ModelSpec = serde_json::from_str(
        &std::fs::read_to_string(&spec_path)
            .map_err(|e| Failure::Data(anyhow!("reading {}: {e}", spec_path.display())))?,
    )
    .map_err(|e| Failure::Data(anyhow!("parsing {}: {e}", spec_path.display())))?;
    let mut model = spec.build(0).map_err(|e| Failure::Data(e.into()))?;
    model
        .load_checkpoint(ckpt, false)
        .map_err(|e| Failure::Data(e.into()))?;
    Ok(model)
}

fn run_detect(args: DetectArgs, cfg: &KvConfig) -> Result<(), Failure> {
    let score_threshold = args
        .score_threshold
        .or_else(|| cfg.get_parse("score_threshold"))
        .unwrap_or(0.5);
    let nms_threshold = args
        .nms_threshold
        .or_else(|| cfg.get_parse("nms_threshold"))
        .unwrap_or(0.3);
    echo("model", args.model.display());
    echo("score_threshold", score_threshold);
    echo("nms_threshold", nms_threshold);

    let model = load_model(&args.model, args.spec.as_deref())?;

    let mut inputs: Vec<(String, PathBuf)> = Vec::new();
    if let Some(manifest_path) = &args.manifest {
        let loaded = load_manifest(manifest_path)?;
        for e in &loaded.manifest.entries {
            inputs.push((e.id.clone(), loaded.root.join(&e.image)));
        }
    }
    for img in &args.image {
        let id = img
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| img.display().to_string());
        inputs.push((id, img.clone()));
    }
    if inputs.is_empty() {
        return Err(Failure::Usage("detect needs --manifest or --image".into()));
    }

    let results: Vec<(String, PathBuf, Vec<ScoredBox>)> = inputs
        .par_iter()
        .map(|(id, path)| {
            let image = png_io::load_png(path)?;
            let dets = detect(&model, &image, score_threshold, nms_threshold).map_err(|e| {
                DataError::Parse {
                    path: path.clone(),
                    location: None,
                    detail: e.to_string(),
                }
            })?;
            Ok::<_, DataError>((id.clone(), path.clone(), dets))
        })
        .collect::<Result<_, _>>()?;

    let mut out = String::new();
    let mut total = 0usize;
    for (id, _, dets) in &results {
        for d in dets {
            total += 1;
            let rec = PredRecord {
                image_id: id.clone(),
                label: model.labels.name(d.label).unwrap_or("?").to_string(),
                score: d.score,
                x_min: d.bbox.x_min,
                y_min: d.bbox.y_min,
                x_max: d.bbox.x_max,
                y_max: d.bbox.y_max,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    write_atomic(&args.out, out.as_bytes())
        .map_err(|e| Failure::Data(anyhow!("writing {}: {e}", args.out.display())))?;
    println!(
        "{total} detections over {} images -> {}",
        results.len(),
        args.out.display()
    );

    if let Some(dir) = &args.render_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Data(anyhow!("creating {}: {e}", dir.display())))?;
        for (id, path, dets) in &results {
            let image = png_io::load_png(path)?;
            let rendered = render_detections(&image, dets, &model.labels);
            png_io::save_png(&dir.join(format!("{id}.png")), &rendered)?;
        }
        println!("annotated pages in {}", dir.display());
    }
    Ok(())
}

// ------------------------------------------------------- evaluate/sweep

fn read_predictions(path: &Path, labels: &LabelSet) -> Result<PredictionSet, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Data(anyhow!("reading {}: {e}", path.display())))?;
    let mut preds = PredictionSet::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredRecord = serde_json::from_str(line)
            .map_err(|e| Failure::Data(anyhow!("{}:{}: {e}", path.display(), lineno + 1)))?;
        let label = labels.lookup(&rec.label).ok_or_else(|| {
            Failure::Data(anyhow!(
                "{}:{}: label {:?} not in ground-truth label set {:?}",
                path.display(),
                lineno + 1,
                rec.label,
                labels.names()
            ))
        })?;
        preds.insert(
            rec.image_id,
            ScoredBox::new(
                BBox::from_corners(rec.x_min, rec.y_min, rec.x_max, rec.y_max),
                label,
                rec.score.clamp(0.0, 1.0),
            ),
        );
    }
    Ok(preds)
}

fn ground_truth_from_manifest(path: &Path) -> Result<GroundTruthSet, Failure> {
    let loaded = load_manifest(path)?;
    let labels = loaded.manifest.label_set();
    let mut gts = GroundTruthSet::new(labels.clone());
    for e in &loaded.manifest.entries {
        gts.by_image.entry(e.id.clone()).or_default();
        for b in &e.boxes {
            let label = labels
                .lookup(&b.label)
                .expect("manifest labels validated at load");
            gts.insert(
                e.id.clone(),
                BBox::from_corners(b.x_min, b.y_min, b.x_max, b.y_max),
                label,
            );
        }
    }
    Ok(gts)
}

fn run_evaluate(args: EvaluateArgs, cfg: &KvConfig) -> Result<(), Failure> {
    let iou = args.iou.or_else(|| cfg.get_parse("iou")).unwrap_or(0.5);
    let cutoff = args
        .score_cutoff
        .or_else(|| cfg.get_parse("score_cutoff"))
        .unwrap_or(docdet::eval::DEFAULT_SCORE_CUTOFF);
    echo("gt", args.gt.display());
    echo("pred", args.pred.display());
    echo("iou", iou);
    echo("score_cutoff", cutoff);

    let gts = ground_truth_from_manifest(&args.gt)?;
    let preds = read_predictions(&args.pred, &gts.labels)?;
    let report = evaluate_at(&preds, &gts, iou, cutoff).map_err(|e| Failure::Data(e.into()))?;
    print!("{}", report.render_table());
    println!("mAP = {:.4}  AveF1 = {:.4}", report.map, report.ave_f1);
    if let Some(path) = &args.report {
        write_report(path, &report)?;
        println!("report -> {}", path.display());
    }
    Ok(())
}

fn write_report(path: &Path, report: &EvalReport) -> Result<(), Failure> {
    write_atomic(
        path,
        serde_json::to_string_pretty(report)
            .expect("report serializes")
            .as_bytes(),
    )
    .map_err(|e| Failure::Data(anyhow!("writing {}: {e}", path.display())))
}

fn run_sweep(args: SweepArgs, cfg: &KvConfig) -> Result<(), Failure> {
    let thresholds = parse_csv_f64(
        &args
            .iou
            .or_else(|| cfg.get("iou").map(String::from))
            .unwrap_or_else(|| "0.5,0.6,0.7,0.8".into()),
    )?;
    echo("gt", args.gt.display());
    echo("pred", args.pred.display());
    echo(
        "iou",
        thresholds
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );

    let gts = ground_truth_from_manifest(&args.gt)?;
    let preds = read_predictions(&args.pred, &gts.labels)?;
    let reports =
        threshold_sweep(&preds, &gts, &thresholds).map_err(|e| Failure::Data(e.into()))?;
    for r in &reports {
        println!(
            "iou {:.2}: mAP = {:.4}  AveF1 = {:.4}",
            r.iou_threshold, r.map, r.ave_f1
        );
        if let Some(dir) = &args.report_dir {
            std::fs::create_dir_all(dir)
                .map_err(|e| Failure::Data(anyhow!("creating {}: {e}", dir.display())))?;
            write_report(&dir.join(format!("report_iou_{:.2}.json", r.iou_threshold)), r)?;
        }
    }
    Ok(())
}

// --------------------------------------------------------------- render

fn run_render(args: RenderArgs) -> Result<(), Failure> {
    echo("manifest", args.manifest.display());
    echo("out_dir", args.out_dir.display());
    let loaded = load_manifest(&args.manifest)?;
    let labels = loaded.manifest.label_set();
    let docs = load_documents(&loaded.manifest, &loaded.root)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Failure::Data(anyhow!("creating {}: {e}", args.out_dir.display())))?;

    let preds = args
        .pred
        .as_deref()
        .map(|p| read_predictions(p, &labels))
        .transpose()?;
    for doc in &docs {
        let rendered = match &preds {
            Some(p) => {
                let empty = Vec::new();
                let dets = p.by_image.get(&doc.id).unwrap_or(&empty);
                render_detections(&doc.image, dets, &labels)
            }
            None => render_annotations(&doc.image, &doc.annotations, &labels),
        };
        png_io::save_png(&args.out_dir.join(format!("{}.png", doc.id)), &rendered)?;
    }
    println!("rendered {} pages", docs.len());
    Ok(())
}

// ------------------------------------------------------------ gradcheck

fn run_gradcheck() -> Result<(), Failure> {
    let results = docdet::verify::run_all();
    let mut all_pass = true;
    for r in &results {
        let status = if r.pass() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<24} max_rel_err {:.3e} (tolerance {:.0e})",
            r.name, r.max_rel_err, r.tolerance
        );
        all_pass &= r.pass();
    }
    if all_pass {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(Failure::Gradcheck)
    }
}
