use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sftik_core::dataset::{
    generate_synthetic, load_dataset, split_loocv, write_dataset, StrideDataset, SyntheticSpec, INDEX_FILE,
};
use sftik_core::model::{count_flops, count_params, image_encoder_flops, Ablation, ModelConfig};
use sftik_core::signal::io::{load_depth_frames, read_imu_csv};
use sftik_core::signal::{calibrate_bias, design_butterworth2, filter_stream, segment_strides, SegmentConfig};
use sftik_core::train::{
    baseline_copy_previous, evaluate, load_checkpoint, merge_reports, report_from_predictions, save_checkpoint,
    train, write_log, write_metrics, MetricsReport, TrainConfig, MANIFEST_FILE,
};
use sftik_core::{Error, Result};

use crate::args::{
    Command, EvalArgs, FlopsArgs, ModelArgs, PreprocessArgs, ReportArgs, SplitArg, SynthArgs, TrainArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Flops(a) => flops(a),
        Command::Report(a) => report(a),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value, path: &Path) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn refuse_existing(paths: &[&Path], force: bool) -> Result<()> {
    match paths.iter().find(|p| p.exists()) {
        Some(p) if !force => Err(Error::Exists(p.to_path_buf())),
        _ => Ok(()),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => from_value(read_json(p)?, p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(n) = a.subjects {
        spec.n_subjects = n;
    }
    if let Some(n) = a.strides {
        spec.strides_per_subject = n;
    }
    if let Some(n) = a.image_size {
        spec.image_size = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    refuse_existing(&[&a.out.join(INDEX_FILE)], a.force)?;
    let ds = generate_synthetic(&spec)?;
    write_dataset(&a.out, &ds, a.force)?;
    write_json(
        &a.out.join(MANIFEST_FILE),
        &json!({ "command": "synth", "samples": ds.len(), "spec": spec }),
    )?;
    log::info!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    refuse_existing(&[&a.out.join(INDEX_FILE)], a.force)?;
    let stream = read_imu_csv(&a.imu, a.side.into())?;
    let period = stream
        .mean_period()
        .ok_or_else(|| Error::Contract("IMU stream needs at least two samples".into()))?;
    let standstill = ((a.standstill_s / period).round() as usize).min(stream.len());
    let stream = calibrate_bias(&stream, 0..standstill)?;
    let coeffs = design_butterworth2(a.cutoff_hz, 1.0 / period)?;
    let stream = filter_stream(&coeffs, &stream)?;
    let frames = load_depth_frames(&a.frames, a.image_size)?;
    let cfg = SegmentConfig {
        min_stride_s: a.min_stride_s,
        max_stride_s: a.max_stride_s,
        ..SegmentConfig::default()
    };
    let seg = segment_strides(&stream, &frames, a.subject, &cfg)?;
    let ds = StrideDataset::new(seg.samples);
    write_dataset(&a.out, &ds, a.force)?;
    write_json(
        &a.out.join(MANIFEST_FILE),
        &json!({
            "command": "preprocess",
            "imu": a.imu,
            "frames": a.frames,
            "subject": a.subject,
            "side": format!("{:?}", a.side).to_lowercase(),
            "sample_rate_hz": 1.0 / period,
            "cutoff_hz": a.cutoff_hz,
            "standstill_samples": standstill,
            "image_size": a.image_size,
            "min_stride_s": a.min_stride_s,
            "max_stride_s": a.max_stride_s,
            "mhe_events": seg.boundaries.len(),
            "samples": ds.len(),
            "skipped": seg.skipped,
        }),
    )?;
    log::info!("{} samples, {} strides skipped", ds.len(), seg.skipped.len());
    Ok(())
}

fn apply_model_args(cfg: &mut ModelConfig, m: &ModelArgs) -> Result<()> {
    if let Some(v) = m.d_emb {
        cfg.d_emb = v;
    }
    if let Some(v) = m.n1 {
        cfg.n1 = v;
    }
    if let Some(v) = m.n2 {
        cfg.n2 = v;
    }
    if let Some(v) = m.heads {
        cfg.heads = v;
    }
    if let Some(v) = m.patch {
        cfg.image_patch_mode = v.into();
    }
    if let Some(v) = m.image_size {
        cfg.image_height = v;
        cfg.image_width = v;
    }
    if let Some(v) = m.image_patch {
        cfg.image_patch = v;
    }
    if let Some(v) = m.image_channels {
        cfg.image_channels = v;
    }
    if let Some(v) = m.imu_patch_len {
        cfg.imu_patch_len = v;
    }
    if let Some(v) = m.imu_patch_stride {
        cfg.imu_patch_stride = v;
    }
    if let Some(v) = m.fusion {
        cfg.fusion = v.into();
    }
    if m.no_prev_image || m.no_imu {
        cfg.ablation = Ablation::from_flags(m.no_prev_image, m.no_imu)?;
    }
    cfg.validate()
}

/// Defaults, then the config file, then flags.
fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => from_value(read_json(p)?, p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.fold {
        cfg.fold = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup_steps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    apply_model_args(&mut cfg.model, &a.model)?;
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    refuse_existing(&[&a.out.join(MANIFEST_FILE)], a.force)?;
    let ds = load_dataset(&a.data)?;
    let split = split_loocv(&ds.subjects(), cfg.fold)?;
    let train_ds = ds.filter_subjects(&split.train);
    let val_ds = ds.filter_subjects(&split.val);
    log::info!(
        "fold {}: {} train / {} val strides",
        cfg.fold,
        train_ds.len(),
        val_ds.len()
    );
    let outcome = train(&cfg, &train_ds, &val_ds)?;
    save_checkpoint(&a.out, &outcome.checkpoint, a.force)?;
    write_log(&a.out.join("train_log.jsonl"), &outcome.log)?;
    write_json(
        &a.out.join("run.json"),
        &json!({
            "command": "train",
            "data": a.data,
            "split": split,
            "config": cfg,
            "checkpoint_epoch": outcome.checkpoint.epoch,
            "checkpoint_step": outcome.checkpoint.step,
            "val_rmse": outcome.checkpoint.val_rmse,
        }),
    )
}

fn eval(a: EvalArgs) -> Result<()> {
    let metrics_json = a.out.join("metrics.json");
    let metrics_csv = a.out.join("metrics.csv");
    let baseline_json = a.out.join("baseline.json");
    let baseline_csv = a.out.join("baseline.csv");
    let manifest = a.out.join(MANIFEST_FILE);
    refuse_existing(
        &[&metrics_json, &metrics_csv, &baseline_json, &baseline_csv, &manifest],
        a.force,
    )?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let split = split_loocv(&ds.subjects(), ckpt.config.fold)?;
    let subjects = match a.split {
        SplitArg::Train => split.train.clone(),
        SplitArg::Val => split.val.clone(),
        SplitArg::Test => split.test.clone(),
        SplitArg::All => ds.subjects(),
    };
    let subset = ds.filter_subjects(&subjects);
    let report = evaluate(&ckpt, &subset)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_metrics(&metrics_json, &metrics_csv, &report)?;
    if a.baseline {
        let preds: Vec<Vec<f64>> = subset.samples.iter().map(baseline_copy_previous).collect();
        let base = report_from_predictions("copy_previous", &subset.samples, &preds)?;
        write_metrics(&baseline_json, &baseline_csv, &base)?;
    }
    write_json(
        &manifest,
        &json!({
            "command": "eval",
            "checkpoint": a.checkpoint,
            "data": a.data,
            "split": format!("{:?}", a.split).to_lowercase(),
            "subjects": subjects,
            "baseline": a.baseline,
            "config": ckpt.config,
        }),
    )?;
    println!(
        "{} strides: rmse {:.3} deg, pcc {:.4}",
        report.overall.count,
        report.overall.rmse_mean.unwrap_or(f64::NAN),
        report.overall.pcc_mean.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn flops(a: FlopsArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let mut v = read_json(p)?;
            if let Some(model) = v.get_mut("model").map(Value::take) {
                v = model;
            }
            from_value(v, p)?
        }
        None => ModelConfig::default(),
    };
    apply_model_args(&mut cfg, &a.model)?;
    let out = match a.encoder_blocks {
        Some(blocks) => json!({
            "config": cfg,
            "encoder_blocks": blocks,
            "flops": image_encoder_flops(&cfg, blocks),
        }),
        None => json!({
            "config": cfg,
            "params": count_params(&cfg),
            "flops": count_flops(&cfg),
        }),
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    refuse_existing(&[&a.out], a.force)?;
    let mut runs = Vec::with_capacity(a.inputs.len());
    for spec in &a.inputs {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--input {spec:?} is not label=path")))?;
        let path = Path::new(path);
        let report: MetricsReport = from_value(read_json(path)?, path)?;
        runs.push((label.to_string(), report));
    }
    let csv = merge_reports(&runs)?;
    fs::write(&a.out, csv).map_err(|e| Error::io(&a.out, e))
}
