use serde::{Deserialize, Serialize};
use sftik_tensor::Tensor;

use crate::dataset::StrideDataset;
use crate::error::{Error, Result};

const MIN_STD: f64 = 1e-6;

/// Training-split statistics: per-channel kinematics standardization and a
/// per-point target mean with one shared target scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub k_mean: Vec<f64>,
    pub k_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: f64,
}

impl Normalizer {
    pub fn fit(ds: &StrideDataset) -> Result<Self> {
        let first = ds
            .samples
            .first()
            .ok_or_else(|| Error::Contract("cannot fit normalization on an empty split".into()))?;
        let (channels, points) = first.kinematics.dims2()?;
        let out_len = first.target.numel();
        let mut k_sum = vec![0.0; channels];
        let mut k_sq = vec![0.0; channels];
        let mut t_sum = vec![0.0; out_len];
        for s in &ds.samples {
            if s.kinematics.shape() != [channels, points] || s.target.numel() != out_len {
                return Err(Error::Dimension(format!(
                    "sample {}/{} has kinematics {:?} and target {:?}",
                    s.subject,
                    s.stride_id,
                    s.kinematics.shape(),
                    s.target.shape()
                )));
            }
            for c in 0..channels {
                for &v in s.kinematics.row(c) {
                    k_sum[c] += v as f64;
                    k_sq[c] += v as f64 * v as f64;
                }
            }
            for (acc, &v) in t_sum.iter_mut().zip(s.target.data()) {
                *acc += v as f64;
            }
        }
        let n = ds.len() as f64;
        let per_channel = n * points as f64;
        let k_mean: Vec<f64> = k_sum.iter().map(|s| s / per_channel).collect();
        let k_std = k_sq
            .iter()
            .zip(&k_mean)
            .map(|(sq, m)| (sq / per_channel - m * m).max(0.0).sqrt().max(MIN_STD))
            .collect();
        let target_mean: Vec<f64> = t_sum.iter().map(|s| s / n).collect();
        let mut t_var = 0.0;
        for s in &ds.samples {
            for (&v, m) in s.target.data().iter().zip(&target_mean) {
                t_var += (v as f64 - m).powi(2);
            }
        }
        let target_std = (t_var / (n * out_len as f64)).sqrt().max(MIN_STD);
        Ok(Self { k_mean, k_std, target_mean, target_std })
    }

    pub fn kinematics(&self, k: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (channels, points) = k.dims2()?;
        if channels != self.k_mean.len() {
            return Err(Error::Dimension(format!(
                "{channels} kinematics channels, normalizer has {}",
                self.k_mean.len()
            )));
        }
        Ok(Tensor::from_fn(vec![channels, points], |i| {
            let c = i / points;
            ((k.data()[i] as f64 - self.k_mean[c]) / self.k_std[c]) as f32
        }))
    }

    pub fn target(&self, a: &Tensor<f32>) -> Result<Tensor<f32>> {
        if a.numel() != self.target_mean.len() {
            return Err(Error::Dimension(format!(
                "target length {}, normalizer has {}",
                a.numel(),
                self.target_mean.len()
            )));
        }
        Ok(Tensor::from_fn(vec![1, a.numel()], |i| {
            ((a.data()[i] as f64 - self.target_mean[i]) / self.target_std) as f32
        }))
    }

    /// Maps a normalized prediction back to degrees.
    pub fn denormalize(&self, pred: &[f32]) -> Vec<f64> {
        pred.iter()
            .zip(&self.target_mean)
            .map(|(&p, m)| p as f64 * self.target_std + m)
            .collect()
    }
}
