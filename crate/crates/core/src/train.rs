//! Training and evaluation harness: seeded AdamW loop with early stopping
//! on validation mAP@0.5, checkpoint/resume, deterministic evaluation and
//! the augmentation-grid comparison.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_testset, grid_rows, AugmentSpec};
use crate::checkpoint::Checkpoint;
use crate::data::{load_dataset, load_samples, LoadedDataset};
use crate::detector::{
    assign_targets, detection_loss, Detection, Detector, LossWeights, ModelConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate as evaluate_metrics, MetricsReport};
use crate::report::{CompareReport, CompareRow};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{AdamW, OptimConfig};

/// Decode floor used when collecting detections for AP curves; the
/// operating-point confidence threshold is applied inside the metrics.
const DECODE_CONF_FLOOR: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub stn_enabled: bool,
    pub stn_pool_size: usize,
    pub data_root: PathBuf,
    pub train_split: String,
    pub val_split: String,
    pub n_classes: usize,
    pub image_size: usize,
    pub loss_weights: LossWeights,
    pub weight_decay: f64,
    pub reg_max: usize,
    pub head_width: usize,
    pub conf_thresh: f64,
    pub nms_iou_thresh: f64,
    /// Validate every this many epochs (and on the final epoch).
    pub val_interval: usize,
    /// Optional convergence shortcut: stop once the epoch train loss
    /// reaches this value (and `target_val_map50`, when set, is reached).
    pub target_train_loss: Option<f64>,
    /// Optional additional goal for the convergence shortcut.
    pub target_val_map50: Option<f64>,
    /// Learning-rate factor for the localization sub-network; warps train
    /// more gently than the detector they feed.
    pub stn_lr_scale: f64,
    /// Augmentations are a test-time tool by default; setting this applies
    /// them to the training split as well, with fresh draws every epoch.
    pub train_augment: Option<AugmentSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.002,
            batch_size: 16,
            max_epochs: 100,
            early_stop_patience: 50,
            seed: 0,
            stn_enabled: false,
            stn_pool_size: 28,
            data_root: PathBuf::from("data"),
            train_split: "train".into(),
            val_split: "valid".into(),
            n_classes: 1,
            image_size: 128,
            loss_weights: LossWeights::default(),
            weight_decay: 5e-4,
            reg_max: 8,
            head_width: 32,
            conf_thresh: 0.25,
            nms_iou_thresh: 0.45,
            val_interval: 1,
            target_train_loss: None,
            target_val_map50: None,
            stn_lr_scale: 0.1,
            train_augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("n_classes", self.n_classes),
            ("val_interval", self.val_interval),
            ("reg_max", self.reg_max),
            ("head_width", self.head_width),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.early_stop_patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.early_stop_patience, self.max_epochs
            )));
        }
        if !self.image_size.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "image_size {} must be divisible by 32",
                self.image_size
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.stn_lr_scale <= 0.0 || !self.stn_lr_scale.is_finite() {
            return Err(Error::Config("stn_lr_scale must be positive".into()));
        }
        if let Some(aug) = &self.train_augment {
            aug.validate()?;
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_classes: self.n_classes,
            reg_max: self.reg_max,
            stn_enabled: self.stn_enabled,
            stn_pool_size: self.stn_pool_size,
            head_width: self.head_width,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let text = fs::read_to_string(path)?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of the canonical JSON form, recorded in run records and
    /// checkpoints so resumed runs can verify they match.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    /// Hash over the trajectory-determining fields only: stopping criteria
    /// (max_epochs, patience, convergence targets) may change between an
    /// interrupted run and its resumption, everything else must match.
    pub fn resume_hash(&self) -> String {
        let normalized = TrainConfig {
            max_epochs: 0,
            early_stop_patience: 0,
            target_train_loss: None,
            target_val_map50: None,
            ..self.clone()
        };
        normalized.content_hash()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<MetricsReport>,
    pub best_so_far: bool,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub config_hash: String,
    pub code_version: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_map50: f64,
    pub stopped_early: bool,
}

impl RunRecord {
    fn new(config: &TrainConfig) -> RunRecord {
        RunRecord {
            config: config.clone(),
            config_hash: config.content_hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            epochs: Vec::new(),
            best_epoch: None,
            best_map50: f64::NEG_INFINITY,
            stopped_early: false,
        }
    }

    /// Append-only JSON-lines serialization: a header line, one line per
    /// epoch, and a summary line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let header = serde_json::json!({
            "type": "header",
            "config": self.config,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
        });
        out.push_str(&serde_json::to_string(&header)?);
        out.push('\n');
        for e in &self.epochs {
            let line = serde_json::json!({"type": "epoch", "record": e});
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        let summary = serde_json::json!({
            "type": "summary",
            "best_epoch": self.best_epoch,
            "best_map50": if self.best_map50.is_finite() { Some(self.best_map50) } else { None },
            "stopped_early": self.stopped_early,
        });
        out.push_str(&serde_json::to_string(&summary)?);
        out.push('\n');
        Ok(out)
    }
}

/// Mutable training state carried inside checkpoints for exact resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainState {
    next_epoch: usize,
    best_map50: Option<f64>,
    best_epoch: Option<usize>,
    last_improve_epoch: Option<usize>,
    config_hash: String,
}

pub struct TrainOutcome {
    pub model: Detector,
    pub record: RunRecord,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
}

fn save_training_checkpoint(
    path: &Path,
    model: &Detector,
    opt: &AdamW,
    state: &TrainState,
) -> Result<()> {
    let mut ck = model.to_checkpoint()?;
    let (step, moments) = opt.export_state();
    for (name, m, v) in moments {
        let shape = vec![m.len()];
        ck.push(format!("optim.{name}.m"), &shape, m);
        ck.push(format!("optim.{name}.v"), &shape, v);
    }
    ck.extra = serde_json::json!({
        "model_config": model.cfg,
        "optim_step": step,
        "train_state": state,
    });
    ck.save(path)
}

fn restore_optimizer(ck: &Checkpoint, model: &Detector, opt: &mut AdamW) -> Result<()> {
    let step = ck
        .extra
        .get("optim_step")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Checkpoint("missing optim_step".into()))?;
    let mut moments = Vec::new();
    for (name, _) in model.named_params() {
        let m = ck
            .entry(&format!("optim.{name}.m"))
            .ok_or_else(|| Error::Checkpoint(format!("missing optimizer entry for '{name}'")))?;
        let v = ck
            .entry(&format!("optim.{name}.v"))
            .ok_or_else(|| Error::Checkpoint(format!("missing optimizer entry for '{name}'")))?;
        moments.push((name, m.data.clone(), v.data.clone()));
    }
    opt.import_state(step, &moments)
}

/// Inference over a whole dataset in fixed-size chunks. Results do not
/// depend on the chunking because every per-item computation is
/// independent.
pub fn predict_dataset(
    model: &Detector,
    data: &LoadedDataset,
    nms_iou_thresh: f64,
) -> Result<Vec<Vec<Detection>>> {
    let mut all = Vec::with_capacity(data.len());
    let chunk = 8;
    let mut i = 0;
    while i < data.len() {
        let idx: Vec<usize> = (i..(i + chunk).min(data.len())).collect();
        let (images, _) = data.batch(&idx)?;
        all.extend(model.predict(&images, DECODE_CONF_FLOOR, nms_iou_thresh)?);
        i += chunk;
    }
    Ok(all)
}

/// Evaluate a model on a loaded dataset, optionally after test-time
/// augmentation.
pub fn evaluate_model(
    model: &Detector,
    data: &LoadedDataset,
    augment: Option<&AugmentSpec>,
    conf_thresh: f64,
    nms_iou_thresh: f64,
) -> Result<MetricsReport> {
    let augmented;
    let data = match augment {
        Some(spec) if !spec.is_off() => {
            augmented = augment_testset(data, spec)?;
            &augmented
        }
        _ => data,
    };
    let dets = predict_dataset(model, data, nms_iou_thresh)?;
    evaluate_metrics(&dets, &data.gts(), conf_thresh, data.n_classes)
}

/// Evaluate a checkpoint file against a dataset split on disk.
pub fn evaluate_checkpoint(
    checkpoint: impl AsRef<Path>,
    data_root: impl AsRef<Path>,
    split: &str,
    augment: Option<&AugmentSpec>,
    conf_thresh: f64,
    nms_iou_thresh: f64,
) -> Result<MetricsReport> {
    let ck = Checkpoint::load(checkpoint.as_ref())?;
    let model = Detector::from_checkpoint(&ck)?;
    let index = load_dataset(data_root, split, model.cfg.n_classes)?;
    let data = load_samples(&index)?;
    evaluate_model(&model, &data, augment, conf_thresh, nms_iou_thresh)
}

/// Seeded training loop: shuffled batches, AdamW, validation every
/// `val_interval` epochs with early stopping on mAP@0.5, best and last
/// checkpoints persisted under `out_dir`, run record as JSON-lines.
/// `resume_from` restores parameters, optimizer state and the early-stop
/// bookkeeping from a previous last-checkpoint.
pub fn train(cfg: &TrainConfig, out_dir: &Path, resume_from: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let train_index = load_dataset(&cfg.data_root, &cfg.train_split, cfg.n_classes)?;
    let train_data = load_samples(&train_index)?;
    if train_data.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let val_data = if cfg.val_split == cfg.train_split {
        train_data.clone()
    } else {
        load_samples(&load_dataset(&cfg.data_root, &cfg.val_split, cfg.n_classes)?)?
    };

    let model = Detector::new(cfg.model_config(), cfg.seed);
    let named = model.named_params();
    let stn_lr_scale = cfg.stn_lr_scale;
    // The warp regressor's weight row sums lr-sized steps over its whole
    // fan-in, so its rate is divided by fan-in to keep the predicted
    // parameters moving at the same scale as its bias.
    let fc_fan_in = (crate::stn::LOC_CONV_CHANNELS * cfg.stn_pool_size * cfg.stn_pool_size) as f64;
    let mut opt = AdamW::with_lr_scales(
        &named,
        OptimConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..OptimConfig::default()
        },
        |name| {
            if name == "stn.fc.weight" {
                stn_lr_scale / fc_fan_in
            } else if name.starts_with("stn.") {
                stn_lr_scale
            } else {
                1.0
            }
        },
    );
    let mut state = TrainState {
        next_epoch: 1,
        best_map50: None,
        best_epoch: None,
        last_improve_epoch: None,
        config_hash: cfg.resume_hash(),
    };
    if let Some(path) = resume_from {
        let ck = Checkpoint::load(path)?;
        let restored: TrainState = serde_json::from_value(
            ck.extra
                .get("train_state")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("not a training checkpoint".into()))?,
        )?;
        if restored.config_hash != state.config_hash {
            return Err(Error::Config(
                "resume checkpoint was produced by a different config".into(),
            ));
        }
        for (name, t) in &named {
            let e = ck
                .entry(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))?;
            t.set_data(&e.data)?;
        }
        restore_optimizer(&ck, &model, &mut opt)?;
        state = restored;
    }

    let mut record = RunRecord::new(cfg);
    let best_path = out_dir.join("best.ckpt");
    let last_path = out_dir.join("last.ckpt");
    let geometry: Vec<(usize, usize, usize)> = {
        let s = cfg.image_size;
        vec![(s / 8, s / 8, 8), (s / 16, s / 16, 16), (s / 32, s / 32, 32)]
    };

    let n = train_data.len();
    let mut stopped_early = false;
    let start_epoch = state.next_epoch;
    for epoch in start_epoch..=cfg.max_epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = Rng::new(derive_seed(cfg.seed, 1_000_000 + epoch as u64));
        shuffle_rng.shuffle(&mut order);

        // optional train-time augmentation, re-drawn per epoch
        let augmented_epoch;
        let epoch_data = match &cfg.train_augment {
            Some(aug) if !aug.is_off() => {
                let epoch_spec = AugmentSpec {
                    seed: derive_seed(aug.seed, 2_000_000 + epoch as u64),
                    ..aug.clone()
                };
                augmented_epoch = augment_testset(&train_data, &epoch_spec)?;
                &augmented_epoch
            }
            _ => &train_data,
        };

        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            opt.zero_grad();
            let (images, gts) = epoch_data.batch(batch_idx)?;
            let head = model.forward(&images)?;
            if head.geometry() != geometry {
                return Err(Error::Config(format!(
                    "dataset image size does not match configured image_size {}",
                    cfg.image_size
                )));
            }
            let targets = assign_targets(&gts, &geometry, cfg.image_size, &model.cfg)?;
            let loss = detection_loss(&head, &targets, &cfg.loss_weights, cfg.image_size)?;
            let loss_val = loss.item();
            if !loss_val.is_finite() {
                let dump = serde_json::json!({
                    "epoch": epoch,
                    "batch": batch_idx,
                    "loss": format!("{loss_val}"),
                    "config_hash": record.config_hash,
                });
                let dump_path = out_dir.join("diagnostic_dump.json");
                fs::write(&dump_path, serde_json::to_string_pretty(&dump)?)?;
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch} (diagnostics in {})",
                    dump_path.display()
                )));
            }
            loss.backward()?;
            // branches without assigned cells this batch get zero gradients
            for (_, t) in &named {
                t.ensure_zero_grad();
            }
            opt.step()?;
            loss_sum += loss_val * batch_idx.len() as f64;
        }
        let train_loss = loss_sum / n as f64;

        let target_reached = cfg.target_train_loss.is_some_and(|t| train_loss <= t);
        let do_val =
            epoch % cfg.val_interval == 0 || epoch == cfg.max_epochs || target_reached;
        let mut best_so_far = false;
        let mut patience_exhausted = false;
        let val = if do_val {
            let report = evaluate_model(&model, &val_data, None, cfg.conf_thresh, cfg.nms_iou_thresh)?;
            if state.best_map50.is_none_or(|b| report.map50 > b) {
                state.best_map50 = Some(report.map50);
                state.best_epoch = Some(epoch);
                state.last_improve_epoch = Some(epoch);
                best_so_far = true;
            } else {
                let since = epoch - state.last_improve_epoch.unwrap_or(0);
                patience_exhausted = since >= cfg.early_stop_patience;
            }
            Some(report)
        } else {
            None
        };

        record.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val,
            best_so_far,
            wall_ms: t0.elapsed().as_millis() as u64,
        });

        state.next_epoch = epoch + 1;
        save_training_checkpoint(&last_path, &model, &opt, &state)?;
        if best_so_far {
            save_training_checkpoint(&best_path, &model, &opt, &state)?;
        }

        let goals_met = target_reached
            && cfg
                .target_val_map50
                .is_none_or(|m| record.epochs.last().is_some_and(|e| {
                    e.val.as_ref().is_some_and(|r| r.map50 >= m)
                }));
        if goals_met {
            stopped_early = true;
            break;
        }
        if patience_exhausted {
            stopped_early = true;
            break;
        }
    }

    record.best_epoch = state.best_epoch;
    record.best_map50 = state.best_map50.unwrap_or(f64::NEG_INFINITY);
    record.stopped_early = stopped_early;
    fs::write(out_dir.join("run_record.jsonl"), record.to_jsonl()?)?;
    if !best_path.exists() {
        save_training_checkpoint(&best_path, &model, &opt, &state)?;
    }
    Ok(TrainOutcome {
        model,
        record,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
    })
}

/// Inputs to the grid comparison: two ready checkpoints, or a base config
/// to train per run.
pub enum CompareInput<'a> {
    Checkpoints { baseline: &'a Path, stn: &'a Path },
    Configs { base: &'a TrainConfig, out_dir: &'a Path },
}

/// Augmentation-grid comparison over the 8 on/off combinations of
/// rotation, shear and crop, for a baseline and a transformer-equipped
/// model, with mean and sample standard deviation over `n_runs` runs.
///
/// With fixed checkpoints the runs differ only in the per-run augmentation
/// seed; in config mode each run also retrains both models under a
/// distinct seed, varying initialization and data order together.
pub fn compare(
    input: CompareInput<'_>,
    data_root: &Path,
    split: &str,
    n_runs: usize,
    seed: u64,
    conf_thresh: f64,
    nms_iou_thresh: f64,
) -> Result<CompareReport> {
    if n_runs == 0 {
        return Err(Error::Config("n_runs must be positive".into()));
    }
    // models per run: (name, detector)
    let mut runs: Vec<Vec<(String, Detector)>> = Vec::with_capacity(n_runs);
    let seed_policy;
    match input {
        CompareInput::Checkpoints { baseline, stn } => {
            seed_policy = "fixed checkpoints; augmentation draw seed varies per run".to_string();
            for _ in 0..n_runs {
                let b = Detector::from_checkpoint(&Checkpoint::load(baseline)?)?;
                let s = Detector::from_checkpoint(&Checkpoint::load(stn)?)?;
                runs.push(vec![("baseline".into(), b), ("stn".into(), s)]);
            }
        }
        CompareInput::Configs { base, out_dir } => {
            seed_policy =
                "per-run seed varies initialization and data order; augmentation draw seed varies per run"
                    .to_string();
            for run in 0..n_runs {
                let run_seed = derive_seed(seed, 10_000 + run as u64);
                let mut models = Vec::new();
                for (name, stn_enabled) in [("baseline", false), ("stn", true)] {
                    let cfg = TrainConfig {
                        stn_enabled,
                        seed: run_seed,
                        ..base.clone()
                    };
                    let dir = out_dir.join(format!("compare_{name}_run{run}"));
                    let outcome = train(&cfg, &dir, None)?;
                    models.push((name.to_string(), outcome.model));
                }
                runs.push(models);
            }
        }
    }

    let n_classes = runs[0][0].1.cfg.n_classes;
    let index = load_dataset(data_root, split, n_classes)?;
    let data = load_samples(&index)?;

    let mut rows = Vec::new();
    for flags in grid_rows() {
        for model_i in 0..2 {
            let mut p = Vec::new();
            let mut r = Vec::new();
            let mut m50 = Vec::new();
            let mut m5095 = Vec::new();
            for (run, models) in runs.iter().enumerate() {
                let spec = AugmentSpec::from_flags(
                    flags[0],
                    flags[1],
                    flags[2],
                    derive_seed(seed, run as u64),
                );
                let report = evaluate_model(
                    &models[model_i].1,
                    &data,
                    Some(&spec),
                    conf_thresh,
                    nms_iou_thresh,
                )?;
                p.push(report.precision);
                r.push(report.recall);
                m50.push(report.map50);
                m5095.push(report.map50_95);
            }
            let (pm, ps) = mean_std(&p);
            let (rm, rs) = mean_std(&r);
            let (mm, ms) = mean_std(&m50);
            let (mm95, ms95) = mean_std(&m5095);
            rows.push(CompareRow {
                rotation: flags[0],
                shear: flags[1],
                crop: flags[2],
                model: runs[0][model_i].0.clone(),
                precision_mean: pm,
                precision_std: ps,
                recall_mean: rm,
                recall_std: rs,
                map50_mean: mm,
                map50_std: ms,
                map50_95_mean: mm95,
                map50_95_std: ms95,
            });
        }
    }
    Ok(CompareReport {
        rows,
        n_runs,
        seed,
        seed_policy,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
