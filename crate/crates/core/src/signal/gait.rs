//! Stride segmentation at maximum hip extension (MHE).
//!
//! Thigh angle is flexion-positive, so MHE events are local minima.

use std::collections::VecDeque;
use std::ops::Range;

use serde::Serialize;
use sftik_tensor::Tensor;

use crate::error::{Error, Result};
use crate::signal::depth::{pair_keyframe, DepthFrame};
use crate::signal::stream::{ImuStream, N_CHANNELS, THIGH_CHANNEL};
use crate::types::StrideSample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MheConfig {
    /// Minimum separation of two events, in samples.
    pub min_distance_samples: usize,
    /// Minimum topographic prominence, degrees.
    pub prominence_deg: f64,
}

impl Default for MheConfig {
    fn default() -> Self {
        Self {
            min_distance_samples: 50,
            prominence_deg: 5.0,
        }
    }
}

/// Subtracts the standstill mean of the thigh-angle channel from that channel.
///
/// `window` indexes samples of `stream` and must span at least one second.
pub fn calibrate_bias(stream: &ImuStream, window: Range<usize>) -> Result<ImuStream> {
    if window.end > stream.len() || window.start >= window.end {
        return Err(Error::Calibration(format!(
            "standstill window {window:?} outside a stream of {} samples",
            stream.len()
        )));
    }
    let period = stream
        .mean_period()
        .ok_or_else(|| Error::Calibration("stream too short to estimate its rate".into()))?;
    let seconds = window.len() as f64 * period;
    if seconds < 1.0 - 1e-9 {
        return Err(Error::Calibration(format!(
            "standstill window covers {seconds:.3} s, need at least 1 s"
        )));
    }
    let angle = &stream.channels[THIGH_CHANNEL][window];
    let bias = angle.iter().sum::<f64>() / angle.len() as f64;
    let mut out = stream.clone();
    for v in out.channels[THIGH_CHANNEL].iter_mut() {
        *v -= bias;
    }
    Ok(out)
}

/// `out[i] = min x[j]` over `j in [i - len, i)`, `+inf` when empty.
fn trailing_min(x: &[f64], len: usize) -> Vec<f64> {
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        while dq.front().is_some_and(|&f| f + len < i) {
            dq.pop_front();
        }
        out.push(dq.front().map_or(f64::INFINITY, |&f| x[f]));
        while dq.back().is_some_and(|&b| x[b] >= x[i]) {
            dq.pop_back();
        }
        dq.push_back(i);
    }
    out
}

/// Prominence of the minimum at `i`: the lower of the two highest points
/// crossed before reaching strictly lower ground (or the signal edge) on
/// either side, minus `theta[i]`.
pub fn prominence(theta: &[f64], i: usize) -> f64 {
    let v = theta[i];
    let left = theta[..i]
        .iter()
        .rev()
        .take_while(|&&x| x >= v)
        .fold(v, |m, &x| m.max(x));
    let right = theta[i + 1..]
        .iter()
        .take_while(|&&x| x >= v)
        .fold(v, |m, &x| m.max(x));
    left.min(right) - v
}

/// Interior samples that are the minimum of their `(i - d, i + d)` window
/// (ties resolved to the earliest sample) and have enough prominence.
pub fn detect_mhe(theta: &[f64], config: &MheConfig) -> Result<Vec<usize>> {
    let d = config.min_distance_samples;
    if d == 0 {
        return Err(Error::Config("min_distance_samples must be positive".into()));
    }
    if theta.len() <= d {
        return Err(Error::Contract(format!(
            "signal of {} samples is not longer than the {d}-sample minimum distance",
            theta.len()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("thigh angle contains non-finite samples".into()));
    }
    let n = theta.len();
    let left_min = trailing_min(theta, d - 1);
    let mut rev = theta.to_vec();
    rev.reverse();
    let mut right_min = trailing_min(&rev, d - 1);
    right_min.reverse();

    Ok((1..n - 1)
        .filter(|&i| {
            let v = theta[i];
            v < theta[i - 1]
                && v <= theta[i + 1]
                && v < left_min[i]
                && v <= right_min[i]
                && prominence(theta, i) >= config.prominence_deg
        })
        .collect())
}

/// Linear interpolation onto `n` points spanning the first to last sample.
pub fn resample_linear(series: &[f64], n: usize) -> Result<Vec<f64>> {
    let t = series.len();
    if t < 2 {
        return Err(Error::Contract(format!("need at least 2 samples to resample, got {t}")));
    }
    if n < 2 {
        return Err(Error::Contract(format!("cannot resample onto {n} points")));
    }
    let span = (t - 1) as f64;
    Ok((0..n)
        .map(|k| {
            let pos = (k as f64 * span) / (n - 1) as f64;
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            if frac == 0.0 || i0 + 1 >= t {
                series[i0.min(t - 1)]
            } else {
                series[i0] + frac * (series[i0 + 1] - series[i0])
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentConfig {
    pub mhe: MheConfig,
    pub min_stride_s: f64,
    pub max_stride_s: f64,
    /// Points per resampled stride.
    pub points: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            mhe: MheConfig::default(),
            min_stride_s: 0.4,
            max_stride_s: 2.0,
            points: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum SkipReason {
    Duration { seconds: f64 },
    NoKeyframe { mhe_time: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedStride {
    pub stride_index: usize,
    #[serde(flatten)]
    pub reason: SkipReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub boundaries: Vec<usize>,
    pub samples: Vec<StrideSample>,
    pub skipped: Vec<SkippedStride>,
}

struct Stride {
    range: Range<usize>,
    frame: usize,
}

/// Pairs each retained stride with its predecessor.
///
/// Stride `k` spans boundary samples `b[k]..=b[k+1]`. A sample is emitted for
/// every pair of consecutive retained strides `(k-1, k)`.
pub fn segment_strides(
    stream: &ImuStream,
    frames: &[DepthFrame],
    subject: u32,
    config: &SegmentConfig,
) -> Result<Segmentation> {
    let frame_times: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();
    if frame_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Contract("depth frames must be sorted by timestamp".into()));
    }
    let boundaries = detect_mhe(stream.thigh_angle(), &config.mhe)?;
    let mut skipped = Vec::new();
    let strides: Vec<Option<Stride>> = boundaries
        .windows(2)
        .enumerate()
        .map(|(k, b)| {
            let (t0, t1) = (stream.timestamps[b[0]], stream.timestamps[b[1]]);
            let seconds = t1 - t0;
            if !(config.min_stride_s..=config.max_stride_s).contains(&seconds) {
                log::info!("stride {k}: dropped, duration {seconds:.2} s");
                skipped.push(SkippedStride {
                    stride_index: k,
                    reason: SkipReason::Duration { seconds },
                });
                return None;
            }
            let Some(frame) = pair_keyframe(t0, &frame_times) else {
                log::info!("stride {k}: dropped, no depth frame at or before {t0:.3} s");
                skipped.push(SkippedStride {
                    stride_index: k,
                    reason: SkipReason::NoKeyframe { mhe_time: t0 },
                });
                return None;
            };
            Some(Stride {
                range: b[0]..b[1] + 1,
                frame,
            })
        })
        .collect();

    let mut samples = Vec::new();
    for k in 1..strides.len() {
        let (Some(prev), Some(cur)) = (&strides[k - 1], &strides[k]) else {
            continue;
        };
        let mut kin = Vec::with_capacity(N_CHANNELS * config.points);
        for ch in &stream.channels {
            kin.extend(resample_linear(&ch[prev.range.clone()], config.points)?.into_iter().map(|v| v as f32));
        }
        let target = resample_linear(&stream.thigh_angle()[cur.range.clone()], config.points)?;
        samples.push(StrideSample {
            kinematics: Tensor::new(vec![N_CHANNELS, config.points], kin)?,
            image_prev: frames[prev.frame].pixels.clone(),
            image_cur: frames[cur.frame].pixels.clone(),
            target: Tensor::new(vec![config.points], target.into_iter().map(|v| v as f32).collect())?,
            terrain: frames[cur.frame].terrain,
            prev_terrain: frames[prev.frame].terrain,
            subject,
            side: stream.side,
            stride_id: k as u32,
        });
    }
    Ok(Segmentation {
        boundaries,
        samples,
        skipped,
    })
}
