use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sftik_tensor::{adam_step, AdamConfig, AdamState, LrSchedule, Tape, Tensor};

use crate::dataset::{batch_indices, StrideDataset};
use crate::error::{Error, Result};
use crate::model::{forward_batch, init_params, ModelConfig, ModelInput, ModelParams, ParamVars};
use crate::train::checkpoint::Checkpoint;
use crate::train::eval::predict;
use crate::train::metrics::{mse_loss, rmse};
use crate::train::normalize::Normalizer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub warmup_start_ratio: f64,
    pub final_lr: f64,
    pub seed: u64,
    pub fold: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 30,
            base_lr: LrSchedule::DEFAULT_BASE_LR,
            warmup_steps: LrSchedule::DEFAULT_WARMUP_STEPS,
            warmup_start_ratio: LrSchedule::DEFAULT_WARMUP_START_RATIO,
            final_lr: 0.0,
            seed: 0,
            fold: 0,
            model: ModelConfig::toy(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr {} must be positive", self.base_lr)));
        }
        self.model.validate()
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> u64 {
        n_train.div_ceil(self.batch_size) as u64
    }

    pub fn schedule(&self, n_train: usize) -> Result<LrSchedule> {
        let s = LrSchedule {
            base_lr: self.base_lr,
            warmup_steps: self.warmup_steps,
            warmup_start_ratio: self.warmup_start_ratio,
            total_steps: self.epochs as u64 * self.steps_per_epoch(n_train),
            final_lr: self.final_lr,
        };
        s.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(s)
    }
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: u64,
        lr: f64,
        loss: f64,
        grad_norm: f64,
    },
    Epoch {
        epoch: usize,
        step: u64,
        train_loss: f64,
        val_rmse: Option<f64>,
    },
}

pub struct TrainOutcome {
    /// Parameters with the best validation RMSE (the last ones without a
    /// validation split).
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
}

pub fn write_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in log {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn dropout_seed(seed: u64, step: u64, slot: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (step << 20) ^ slot as u64
}

fn mean_stride_rmse(preds: &[Vec<f64>], ds: &StrideDataset) -> Result<f64> {
    let mut total = 0.0;
    for (p, s) in preds.iter().zip(&ds.samples) {
        let t: Vec<f64> = s.target.data().iter().map(|&v| v as f64).collect();
        total += rmse(p, &t)?;
    }
    Ok(total / ds.len() as f64)
}

/// Mini-batch Adam on the per-element MSE of normalized targets. Fully
/// determined by `cfg.seed` and the data.
pub fn train(cfg: &TrainConfig, train_ds: &StrideDataset, val_ds: &StrideDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let schedule = cfg.schedule(train_ds.len())?;
    let normalizer = Normalizer::fit(train_ds)?;
    let kin: Vec<Tensor<f32>> = train_ds
        .samples
        .iter()
        .map(|s| normalizer.kinematics(&s.kinematics))
        .collect::<Result<_>>()?;
    let targets: Vec<Tensor<f32>> = train_ds
        .samples
        .iter()
        .map(|s| normalizer.target(&s.target))
        .collect::<Result<_>>()?;

    let init = init_params(&cfg.model, cfg.seed)?;
    let names: Vec<String> = init.tensors.keys().cloned().collect();
    let mut flat: Vec<Tensor<f32>> = init.tensors.into_values().collect();
    let mut adam = AdamState::new(&flat, AdamConfig::default());
    let snapshot = |flat: &[Tensor<f32>]| ModelParams {
        tensors: names.iter().cloned().zip(flat.iter().cloned()).collect(),
    };

    let mut log = Vec::new();
    let mut step = 0u64;
    let mut best: Option<(f64, ModelParams<f32>, u64, usize)> = None;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for batch in batch_indices(train_ds.len(), cfg.batch_size, cfg.seed, epoch as u64, true)? {
            let lr = schedule.lr_at(step)?;
            let mut tape = Tape::<f32>::new();
            let vars = ParamVars::register_named(&mut tape, &names, &flat, true)?;
            let inputs: Vec<ModelInput<'_, f32>> = batch
                .iter()
                .map(|&i| ModelInput {
                    kinematics: &kin[i],
                    image_prev: &train_ds.samples[i].image_prev,
                    image_cur: &train_ds.samples[i].image_cur,
                })
                .collect();
            let seeds: Vec<u64> = (0..batch.len()).map(|slot| dropout_seed(cfg.seed, step, slot)).collect();
            let outs = forward_batch(&mut tape, &vars, &inputs, &cfg.model, Some(&seeds))?;
            let losses = outs
                .iter()
                .zip(&batch)
                .map(|(o, &i)| mse_loss(&mut tape, o.prediction, &targets[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = tape.add(total, l)?;
            }
            let loss = tape.scale(total, 1.0 / batch.len() as f32)?;
            let loss_value = tape.value(loss).data()[0] as f64;
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor<f32>> = names
                .iter()
                .zip(&flat)
                .map(|(n, p)| Ok(grads.get_or_zeros(vars.get(n)?, p.shape())))
                .collect::<Result<_>>()?;
            let grad_norm = grads
                .iter()
                .flat_map(|g| g.data())
                .map(|&g| g as f64 * g as f64)
                .sum::<f64>()
                .sqrt();
            if !loss_value.is_finite() || !grad_norm.is_finite() {
                return Err(Error::Diverged { step, lr, grad_norm, loss: loss_value });
            }
            adam_step(&mut flat, &grads, &mut adam, lr)?;
            loss_sum += loss_value * batch.len() as f64;
            log.push(LogRecord::Step { epoch, step, lr, loss: loss_value, grad_norm });
            step += 1;
        }

        let train_loss = loss_sum / train_ds.len() as f64;
        let val_rmse = if val_ds.is_empty() {
            None
        } else {
            let params = snapshot(&flat);
            let preds = predict(&params, &normalizer, &cfg.model, &val_ds.samples)?;
            let v = mean_stride_rmse(&preds, val_ds)?;
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, params, step, epoch));
            }
            Some(v)
        };
        match val_rmse {
            Some(v) => log::info!("epoch {epoch}: train loss {train_loss:.5}, val rmse {v:.4}"),
            None => log::info!("epoch {epoch}: train loss {train_loss:.5}"),
        }
        log.push(LogRecord::Epoch { epoch, step, train_loss, val_rmse });
    }

    let (val_rmse, params, ck_step, ck_epoch) = match best {
        Some((v, p, s, e)) => (Some(v), p, s, e),
        None => (None, snapshot(&flat), step, cfg.epochs - 1),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            params,
            normalizer,
            step: ck_step,
            epoch: ck_epoch,
            val_rmse,
        },
        log,
    })
}
