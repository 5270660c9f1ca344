//! Command-line surface: train, eval, compare, fuse-bands, explain and
//! synth. Failures print a machine-readable JSON error to stderr and exit
//! nonzero.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use stn_detect::augment::AugmentSpec;
use stn_detect::checkpoint::Checkpoint;
use stn_detect::data::pnm;
use stn_detect::data::{fuse_bands, load_image_pixels, synth_dataset, Band, SpectralImage};
use stn_detect::detector::Detector;
use stn_detect::explain::{eigencam, overlay};
use stn_detect::report::{CompareReport, EvalReport};
use stn_detect::tensor::Tensor;
use stn_detect::train::{compare, evaluate_checkpoint, train, CompareInput, TrainConfig};

/// Environment variable for the default output root.
const OUT_ROOT_ENV: &str = "STN_DETECT_OUT";

#[derive(Parser)]
#[command(
    name = "stn-detect",
    version,
    about = "Spatial-transformer object detection toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a detector from a JSON config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split, optionally augmented.
    Eval(EvalArgs),
    /// Run the 8-row augmentation grid for a baseline and a transformer model.
    Compare(CompareArgs),
    /// Fuse multispectral bands into a pseudo-RGB image.
    FuseBands(FuseArgs),
    /// Render an activation heatmap overlay for one image.
    Explain(ExplainArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file (TrainConfig fields).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `$STN_DETECT_OUT/run-<hash>` or `./runs/run-<hash>`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Resume from a previous last-checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root (`images/<split>`, `labels/<split>`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Augmentations: none|rotation|shear|crop|all, a comma list, or
    /// @file.json with a full AugmentSpec.
    #[arg(long)]
    augment: Option<String>,
    #[arg(long, default_value_t = 0)]
    augment_seed: u64,
    /// Confidence operating point.
    #[arg(long, default_value_t = 0.25)]
    conf: f64,
    /// NMS IoU threshold.
    #[arg(long, default_value_t = 0.45)]
    iou: f64,
    /// Write the full report JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline checkpoint (no input transformer).
    #[arg(long, requires = "stn")]
    baseline: Option<PathBuf>,
    /// Transformer-equipped checkpoint.
    #[arg(long, requires = "baseline")]
    stn: Option<PathBuf>,
    /// Train both models per run from this config instead of using
    /// checkpoints.
    #[arg(long, conflicts_with_all = ["baseline", "stn"])]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    conf: f64,
    #[arg(long, default_value_t = 0.45)]
    iou: f64,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Output directory for training runs in config mode.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// Red band (660 nm), binary PGM.
    #[arg(long)]
    red: PathBuf,
    /// Red-edge band (730 nm), binary PGM.
    #[arg(long)]
    red_edge: PathBuf,
    /// Green band (580 nm), binary PGM.
    #[arg(long)]
    green: PathBuf,
    /// Near-infrared band (820 nm); stored but not fused.
    #[arg(long)]
    nir: Option<PathBuf>,
    /// Output image (.ppm or .png).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cache directory: the fused image is stored as `<content-hash>.ppm`.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Activation tap: input, p3, p4 or p5.
    #[arg(long, default_value = "p3")]
    layer: String,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Dataset root to create.
    #[arg(long)]
    out: PathBuf,
    /// Images per split, as train,valid,test counts.
    #[arg(long, default_value = "8,4,4")]
    images: String,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn parse_augment(arg: &str, seed: u64) -> anyhow::Result<AugmentSpec> {
    if let Some(path) = arg.strip_prefix('@') {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        let spec: AugmentSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        return Ok(spec);
    }
    let mut rotation = false;
    let mut shear = false;
    let mut crop = false;
    for part in arg.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.to_ascii_lowercase().as_str() {
            "none" => {}
            "rotation" | "rot" => rotation = true,
            "shear" => shear = true,
            "crop" | "zoom" => crop = true,
            "all" => {
                rotation = true;
                shear = true;
                crop = true;
            }
            other => bail!("unknown augmentation '{other}' (expected rotation|shear|crop|all|none)"),
        }
    }
    Ok(AugmentSpec::from_flags(rotation, shear, crop, seed))
}

fn load_model(path: &Path) -> anyhow::Result<Detector> {
    let ck = Checkpoint::load(path)?;
    Ok(Detector::from_checkpoint(&ck)?)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let cfg = TrainConfig::from_json_file(&args.config)?;
    let out_dir = args
        .out_dir
        .unwrap_or_else(|| out_root().join(format!("run-{}", cfg.content_hash())));
    let outcome = train(&cfg, &out_dir, args.resume.as_deref())?;
    let summary = serde_json::json!({
        "best_checkpoint": outcome.best_checkpoint,
        "last_checkpoint": outcome.last_checkpoint,
        "run_record": out_dir.join("run_record.jsonl"),
        "best_epoch": outcome.record.best_epoch,
        "best_map50": outcome.record.best_map50,
        "epochs_run": outcome.record.epochs.len(),
        "stopped_early": outcome.record.stopped_early,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let augment = args
        .augment
        .as_deref()
        .map(|a| parse_augment(a, args.augment_seed))
        .transpose()?;
    let metrics = evaluate_checkpoint(
        &args.checkpoint,
        &args.data,
        &args.split,
        augment.as_ref(),
        args.conf,
        args.iou,
    )?;
    let report = EvalReport {
        metrics,
        augment,
        checkpoint: args.checkpoint.display().to_string(),
        dataset: args.data.display().to_string(),
        split: args.split,
        nms_iou_thresh: args.iou,
    };
    print!("{}", report.metrics.to_text_table());
    let json = report.to_json()?;
    if let Some(path) = args.json {
        std::fs::write(&path, serde_json::to_string_pretty(&json)?)?;
        eprintln!("report written to {}", path.display());
    } else {
        println!("{}", serde_json::to_string_pretty(&json)?);
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> anyhow::Result<()> {
    let report: CompareReport = match (&args.baseline, &args.stn, &args.config) {
        (Some(b), Some(s), None) => compare(
            CompareInput::Checkpoints {
                baseline: b,
                stn: s,
            },
            &args.data,
            &args.split,
            args.runs,
            args.seed,
            args.conf,
            args.iou,
        )?,
        (None, None, Some(cfg_path)) => {
            let base = TrainConfig::from_json_file(cfg_path)?;
            let out_dir = args.out_dir.clone().unwrap_or_else(|| out_root().join("compare"));
            compare(
                CompareInput::Configs {
                    base: &base,
                    out_dir: &out_dir,
                },
                &args.data,
                &args.split,
                args.runs,
                args.seed,
                args.conf,
                args.iou,
            )?
        }
        _ => bail!("provide either --baseline and --stn checkpoints, or --config"),
    };
    print!("{}", report.to_text_table());
    let json = report.to_json()?;
    if let Some(path) = args.json {
        std::fs::write(&path, serde_json::to_string_pretty(&json)?)?;
        eprintln!("report written to {}", path.display());
    } else {
        println!("{}", serde_json::to_string_pretty(&json)?);
    }
    Ok(())
}

fn read_band_pgm(path: &Path) -> anyhow::Result<(Vec<u16>, usize, usize, u8)> {
    let img = pnm::read_pgm(path).with_context(|| format!("reading {}", path.display()))?;
    let depth = if img.maxval < 256 { 8 } else { 16 };
    Ok((img.data, img.w, img.h, depth))
}

fn cmd_fuse(args: FuseArgs) -> anyhow::Result<()> {
    if args.out.is_none() && args.cache_dir.is_none() {
        bail!("provide --out and/or --cache-dir");
    }
    let (red, w, h, depth) = read_band_pgm(&args.red)?;
    let mut stack = SpectralImage::new(w, h, depth)?;
    stack.add_band(Band::Red, red)?;
    let (re, w2, h2, _) = read_band_pgm(&args.red_edge)?;
    if (w2, h2) != (w, h) {
        bail!("red-edge band dims {w2}x{h2} differ from red band {w}x{h}");
    }
    stack.add_band(Band::RedEdge, re)?;
    let (g, w3, h3, _) = read_band_pgm(&args.green)?;
    if (w3, h3) != (w, h) {
        bail!("green band dims {w3}x{h3} differ from red band {w}x{h}");
    }
    stack.add_band(Band::Green, g)?;
    if let Some(nir) = &args.nir {
        let (n, w4, h4, _) = read_band_pgm(nir)?;
        if (w4, h4) != (w, h) {
            bail!("nir band dims {w4}x{h4} differ from red band {w}x{h}");
        }
        stack.add_band(Band::Nir, n)?;
    }
    let fused = fuse_bands(&stack)?;
    let data = fused.data();
    let plane = w * h;
    let mut rgb = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            rgb.push((data[c * plane + i] * 255.0).round() as u8);
        }
    }
    let img = pnm::RgbImage { w, h, data: rgb };
    if let Some(out) = &args.out {
        match out.extension().and_then(|e| e.to_str()) {
            Some("png") => pnm::write_png_rgb(out, &img)?,
            _ => pnm::write_ppm(out, &img)?,
        }
        eprintln!("fused image written to {}", out.display());
    }
    if let Some(cache) = &args.cache_dir {
        std::fs::create_dir_all(cache)?;
        let path = cache.join(format!("{}.ppm", stack.content_hash()));
        pnm::write_ppm(&path, &img)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_explain(args: ExplainArgs) -> anyhow::Result<()> {
    let model = load_model(&args.checkpoint)?;
    let (h, w, pixels) = load_image_pixels(&args.image)?;
    let image = Tensor::new(&[1, 3, h, w], pixels)?;
    let (warped, feats) = model.features(&image)?;
    let acts = match args.layer.as_str() {
        "input" => warped,
        "p3" => feats.levels[0].feat.clone(),
        "p4" => feats.levels[1].feat.clone(),
        "p5" => feats.levels[2].feat.clone(),
        other => bail!("unknown layer '{other}' (expected input|p3|p4|p5)"),
    };
    let heatmap = eigencam(&acts, &args.layer)?;
    if heatmap.degenerate {
        eprintln!("warning: all-zero activations at layer {}", args.layer);
    }
    let panel = overlay(&heatmap, &image)?;
    pnm::write_png_rgb(&args.out, &panel)?;
    eprintln!("overlay written to {}", args.out.display());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let counts: Vec<usize> = args
        .images
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .context("--images expects counts like 8,4,4")?;
    if counts.len() != 3 {
        bail!("--images expects exactly three counts: train,valid,test");
    }
    for (split, (count, stream)) in ["train", "valid", "test"]
        .iter()
        .zip(counts.iter().zip(0u64..))
    {
        if *count == 0 {
            continue;
        }
        let seed = stn_detect::rng::derive_seed(args.seed, stream);
        let index = synth_dataset(&args.out, split, seed, *count, args.size)?;
        eprintln!("{split}: {} images", index.items.len());
    }
    println!("{}", args.out.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Compare(args) => cmd_compare(args),
        Command::FuseBands(args) => cmd_fuse(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Synth(args) => cmd_synth(args),
    };
    if let Err(e) = result {
        let err = serde_json::json!({ "error": format!("{e:#}") });
        eprintln!("{err}");
        std::process::exit(1);
    }
}
