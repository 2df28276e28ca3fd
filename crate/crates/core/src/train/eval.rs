use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sftik_tensor::Tape;

use crate::dataset::StrideDataset;
use crate::error::{Error, Result};
use crate::model::{count_flops, count_params, forward_batch, ModelConfig, ModelInput, ModelParams, ParamVars};
use crate::train::checkpoint::Checkpoint;
use crate::train::metrics::{mean_std, pcc, rmse};
use crate::train::normalize::Normalizer;
use crate::types::{StrideSample, Terrain};

const EVAL_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrideMetrics {
    pub subject: u32,
    pub stride_id: u32,
    pub terrain: Terrain,
    pub prev_terrain: Terrain,
    pub rmse: f64,
    /// `None` when either series is constant.
    pub pcc: Option<f64>,
}

/// Mean and population std of per-stride metrics over one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub group: String,
    pub count: usize,
    pub rmse_mean: Option<f64>,
    pub rmse_std: Option<f64>,
    pub pcc_mean: Option<f64>,
    pub pcc_std: Option<f64>,
    /// Strides left out of the PCC aggregate for zero variance.
    pub pcc_excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    /// One entry per terrain class, in `Terrain::ALL` order.
    pub classes: Vec<ClassMetrics>,
    /// Strides whose terrain differs from the preceding stride's.
    pub transition: ClassMetrics,
    pub overall: ClassMetrics,
    pub flops_g: Option<f64>,
    pub params: Option<u64>,
    pub strides: Vec<StrideMetrics>,
}

impl MetricsReport {
    pub fn class(&self, t: Terrain) -> &ClassMetrics {
        &self.classes[t.index()]
    }
}

fn aggregate(group: &str, strides: &[&StrideMetrics]) -> ClassMetrics {
    let rmses: Vec<f64> = strides.iter().map(|s| s.rmse).collect();
    let pccs: Vec<f64> = strides.iter().filter_map(|s| s.pcc).collect();
    let r = mean_std(&rmses);
    let p = mean_std(&pccs);
    ClassMetrics {
        group: group.to_string(),
        count: strides.len(),
        rmse_mean: r.map(|x| x.0),
        rmse_std: r.map(|x| x.1),
        pcc_mean: p.map(|x| x.0),
        pcc_std: p.map(|x| x.1),
        pcc_excluded: strides.len() - pccs.len(),
    }
}

/// Per-stride RMSE/PCC of `preds` (degrees) against each sample's target,
/// aggregated per terrain, over transitions and overall.
pub fn report_from_predictions(label: &str, samples: &[StrideSample], preds: &[Vec<f64>]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    if samples.len() != preds.len() {
        return Err(Error::Dimension(format!("{} predictions for {} strides", preds.len(), samples.len())));
    }
    let mut strides = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(preds) {
        let t: Vec<f64> = s.target.data().iter().map(|&v| v as f64).collect();
        strides.push(StrideMetrics {
            subject: s.subject,
            stride_id: s.stride_id,
            terrain: s.terrain,
            prev_terrain: s.prev_terrain,
            rmse: rmse(p, &t)?,
            pcc: pcc(p, &t)?,
        });
    }
    let excluded = strides.iter().filter(|s| s.pcc.is_none()).count();
    if excluded > 0 {
        log::warn!("{label}: {excluded} strides with zero variance excluded from PCC");
    }
    let classes = Terrain::ALL
        .iter()
        .map(|&t| {
            let group: Vec<&StrideMetrics> = strides.iter().filter(|s| s.terrain == t).collect();
            aggregate(t.as_str(), &group)
        })
        .collect();
    let transitions: Vec<&StrideMetrics> = strides.iter().filter(|s| s.terrain != s.prev_terrain).collect();
    let all: Vec<&StrideMetrics> = strides.iter().collect();
    Ok(MetricsReport {
        model: label.to_string(),
        classes,
        transition: aggregate("transition", &transitions),
        overall: aggregate("overall", &all),
        flops_g: None,
        params: None,
        strides,
    })
}

fn check_shapes(cfg: &ModelConfig, s: &StrideSample) -> Result<()> {
    let k = [cfg.kin_channels, cfg.series_len];
    let img = [cfg.image_channels, cfg.image_height, cfg.image_width];
    if s.kinematics.shape() != k
        || s.image_prev.shape() != img
        || s.image_cur.shape() != img
        || s.target.numel() != cfg.out_len
    {
        return Err(Error::Dimension(format!(
            "stride {}/{} (K {:?}, images {:?}, target {:?}) does not fit the model (K {k:?}, images {img:?}, target {})",
            s.subject,
            s.stride_id,
            s.kinematics.shape(),
            s.image_cur.shape(),
            s.target.shape(),
            cfg.out_len
        )));
    }
    Ok(())
}

/// Predictions in degrees, one per sample, in sample order.
pub fn predict(
    params: &ModelParams<f32>,
    normalizer: &Normalizer,
    cfg: &ModelConfig,
    samples: &[StrideSample],
) -> Result<Vec<Vec<f64>>> {
    samples.iter().try_for_each(|s| check_shapes(cfg, s))?;
    let chunks: Vec<Result<Vec<Vec<f64>>>> = samples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let mut tape = Tape::<f32>::new();
            let vars = ParamVars::register(&mut tape, params, false)?;
            let kin = chunk.iter().map(|s| normalizer.kinematics(&s.kinematics)).collect::<Result<Vec<_>>>()?;
            let inputs: Vec<ModelInput<'_, f32>> = chunk
                .iter()
                .zip(&kin)
                .map(|(s, k)| ModelInput {
                    kinematics: k,
                    image_prev: &s.image_prev,
                    image_cur: &s.image_cur,
                })
                .collect();
            let outs = forward_batch(&mut tape, &vars, &inputs, cfg, None)?;
            Ok(outs
                .iter()
                .map(|o| normalizer.denormalize(tape.value(o.prediction).data()))
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(samples.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn evaluate(ckpt: &Checkpoint, ds: &StrideDataset) -> Result<MetricsReport> {
    if ds.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    let cfg = &ckpt.config.model;
    let preds = predict(&ckpt.params, &ckpt.normalizer, cfg, &ds.samples)?;
    let mut report = report_from_predictions("sftik", &ds.samples, &preds)?;
    report.flops_g = Some(count_flops(cfg).total_gflops);
    report.params = Some(count_params(cfg));
    Ok(report)
}

/// Forecasts the next stride as a copy of the previous stride's thigh angle.
pub fn baseline_copy_previous(sample: &StrideSample) -> Vec<f64> {
    sample.prev_thigh_angle().iter().map(|&v| v as f64).collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the report as pretty JSON and as a per-group CSV.
pub fn write_metrics(json_path: &Path, csv_path: &Path, report: &MetricsReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(json_path, text + "\n").map_err(|e| Error::io(json_path, e))?;
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["terrain", "rmse_mean", "rmse_std", "pcc_mean", "pcc_std", "count"])?;
    for c in report.classes.iter().chain([&report.transition, &report.overall]) {
        w.write_record([
            c.group.clone(),
            cell(c.rmse_mean),
            cell(c.rmse_std),
            cell(c.pcc_mean),
            cell(c.pcc_std),
            c.count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))
}
