//! Seeded synthetic strides with terrain-dependent gait and depth profiles.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sftik_tensor::Tensor;

use crate::dataset::store::StrideDataset;
use crate::error::{Error, Result};
use crate::signal::{MAX_DEPTH_M, N_CHANNELS, THIGH_CHANNEL};
use crate::types::{Side, StrideSample, Terrain};

const DEFAULT_PROFILES: &str = include_str!("../../data/synthetic_profiles.json");
const STRIDE_SECONDS: f64 = 1.1;

/// Row-wise depth profile of a key-frame; row 0 is the far edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthProfile {
    pub near_m: f64,
    pub far_m: f64,
    /// Ramp curvature; 1 is linear.
    pub gamma: f64,
    /// Number of stair edges; 0 for a smooth ramp.
    pub steps: usize,
}

/// Thigh-angle harmonics (degrees, radians) and sensor gains of one terrain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainProfile {
    pub a0: f64,
    pub a1: f64,
    pub psi1: f64,
    pub a2: f64,
    pub psi2: f64,
    pub acc_gain: f64,
    pub depth: DepthProfile,
}

impl TerrainProfile {
    fn oscillation(&self, phi: f64) -> f64 {
        self.a1 * (2.0 * PI * phi + self.psi1).sin() + self.a2 * (4.0 * PI * phi + self.psi2).sin()
    }

    fn d_oscillation(&self, phi: f64) -> f64 {
        2.0 * PI * self.a1 * (2.0 * PI * phi + self.psi1).cos()
            + 4.0 * PI * self.a2 * (4.0 * PI * phi + self.psi2).cos()
    }

    /// Noise-free angle of an average subject.
    pub fn mean_angle(&self, phi: f64) -> f64 {
        self.a0 + self.oscillation(phi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileTable {
    pub version: u32,
    pub terrains: BTreeMap<Terrain, TerrainProfile>,
}

impl Default for ProfileTable {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PROFILES).expect("shipped profile table parses")
    }
}

impl ProfileTable {
    pub fn get(&self, t: Terrain) -> Result<&TerrainProfile> {
        self.terrains
            .get(&t)
            .ok_or_else(|| Error::Config(format!("no synthetic profile for terrain {t}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    /// Samples per subject; one extra stride is generated to seed the first.
    pub strides_per_subject: usize,
    pub terrain_mix: BTreeMap<Terrain, f64>,
    /// Inclusive bounds on the length of a terrain run, in strides.
    pub run_length: [usize; 2],
    pub angle_noise_deg: f64,
    pub imu_noise: f64,
    pub pixel_noise_m: f64,
    pub subject_offset_deg: f64,
    pub subject_amplitude_std: f64,
    /// Relative stride-to-stride amplitude variation.
    pub amplitude_jitter: f64,
    pub image_size: usize,
    pub points: usize,
    pub seed: u64,
    pub profiles: ProfileTable,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let mix = [0.7, 0.075, 0.075, 0.075, 0.075];
        Self {
            n_subjects: 10,
            strides_per_subject: 200,
            terrain_mix: Terrain::ALL.into_iter().zip(mix).collect(),
            run_length: [4, 10],
            angle_noise_deg: 0.5,
            imu_noise: 0.05,
            pixel_noise_m: 0.03,
            subject_offset_deg: 3.0,
            subject_amplitude_std: 0.05,
            amplitude_jitter: 0.03,
            image_size: 224,
            points: 100,
            seed: 0,
            profiles: ProfileTable::default(),
        }
    }
}

/// Normal draw rejected outside three standard deviations.
fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    let d = Normal::new(0.0, std).expect("finite std");
    loop {
        let x = d.sample(rng);
        if x.abs() <= 3.0 * std {
            return x;
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_subjects == 0 || self.strides_per_subject == 0 {
            return err("n_subjects and strides_per_subject must be positive".into());
        }
        if self.points < 2 || self.image_size == 0 {
            return err("points must be at least 2 and image_size positive".into());
        }
        let [lo, hi] = self.run_length;
        if lo == 0 || lo > hi {
            return err(format!("invalid run length bounds {lo}..={hi}"));
        }
        if self.terrain_mix.values().any(|&p| !(p >= 0.0)) {
            return err("terrain proportions must be non-negative".into());
        }
        let total: f64 = self.terrain_mix.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return err(format!("terrain proportions sum to {total}, not 1"));
        }
        for (&t, &p) in &self.terrain_mix {
            if p > 0.0 {
                self.profiles.get(t)?;
            }
        }
        for (name, v) in [
            ("angle_noise_deg", self.angle_noise_deg),
            ("imu_noise", self.imu_noise),
            ("pixel_noise_m", self.pixel_noise_m),
            ("subject_offset_deg", self.subject_offset_deg),
            ("subject_amplitude_std", self.subject_amplitude_std),
            ("amplitude_jitter", self.amplitude_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Hard bounds on any generated thigh angle (all random terms are
    /// truncated at three standard deviations).
    pub fn angle_bounds(&self) -> (f64, f64) {
        let amp = (1.0 + 3.0 * self.subject_amplitude_std) * (1.0 + 3.0 * self.amplitude_jitter);
        let slack = 3.0 * (self.subject_offset_deg + self.angle_noise_deg);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (t, &p) in &self.terrain_mix {
            if p == 0.0 {
                continue;
            }
            let prof = &self.profiles.terrains[t];
            let swing = amp * (prof.a1.abs() + prof.a2.abs());
            lo = lo.min(prof.a0 - swing - slack);
            hi = hi.max(prof.a0 + swing + slack);
        }
        (lo, hi)
    }
}

struct Subject {
    offset: f64,
    amplitude: f64,
}

fn terrain_sequence(spec: &SyntheticSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Terrain>> {
    let classes: Vec<Terrain> = spec.terrain_mix.keys().copied().collect();
    let weights: Vec<f64> = spec.terrain_mix.values().copied().collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("terrain mix: {e}")))?;
    let [lo, hi] = spec.run_length;
    let mut out = Vec::with_capacity(n + hi);
    while out.len() < n {
        let t = classes[pick.sample(rng)];
        let len = rng.random_range(lo..=hi);
        out.extend(std::iter::repeat_n(t, len));
    }
    out.truncate(n);
    Ok(out)
}

fn depth_image(spec: &SyntheticSpec, prof: &DepthProfile, rng: &mut ChaCha8Rng) -> Arc<Tensor<f32>> {
    let n = spec.image_size;
    let near = prof.near_m * (1.0 + trunc_normal(rng, 0.05));
    let far = prof.far_m * (1.0 + trunc_normal(rng, 0.05));
    let stair_phase: f64 = rng.random();
    let tilt = trunc_normal(rng, 0.1);
    let noise = Normal::new(0.0, spec.pixel_noise_m.max(f64::MIN_POSITIVE)).expect("finite std");
    let denom = (n.max(2) - 1) as f64;
    let mut data = Vec::with_capacity(n * n);
    for r in 0..n {
        let t = r as f64 / denom;
        let q = if prof.steps == 0 {
            t.powf(prof.gamma)
        } else {
            ((t * prof.steps as f64 + stair_phase).floor() / prof.steps as f64).min(1.0)
        };
        let base = far + (near - far) * q;
        for c in 0..n {
            let lateral = tilt * (c as f64 / denom - 0.5);
            let px = if spec.pixel_noise_m > 0.0 { noise.sample(rng) } else { 0.0 };
            let d = (base + lateral + px).clamp(0.0, MAX_DEPTH_M);
            data.push((d / MAX_DEPTH_M) as f32);
        }
    }
    Arc::new(Tensor::new(vec![1, n, n], data).expect("square image"))
}

struct Stride {
    terrain: Terrain,
    angle: Vec<f64>,
    kinematics: Tensor<f32>,
    image: Arc<Tensor<f32>>,
}

fn stride(spec: &SyntheticSpec, subject: &Subject, terrain: Terrain, rng: &mut ChaCha8Rng) -> Result<Stride> {
    let prof = spec.profiles.get(terrain)?;
    let n = spec.points;
    let scale = subject.amplitude * (1.0 + trunc_normal(rng, spec.amplitude_jitter));
    let duration = STRIDE_SECONDS * (1.0 + trunc_normal(rng, 0.05));
    let phis: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let angle: Vec<f64> = phis
        .iter()
        .map(|&p| prof.a0 + scale * prof.oscillation(p) + subject.offset + trunc_normal(rng, spec.angle_noise_deg))
        .collect();

    let mut k = vec![0.0f32; N_CHANNELS * n];
    for imu in 0..3 {
        let gain = 0.5 * (imu + 1) as f64;
        let lag = 0.7 * imu as f64;
        for (i, &p) in phis.iter().enumerate() {
            let w = 2.0 * PI * p;
            let gyro = gain * scale * prof.d_oscillation(p) / duration;
            let acc = gain * prof.acc_gain;
            let values = [
                acc * (w + lag).sin(),
                0.5 * acc * (2.0 * w + lag).sin(),
                9.81 + 0.3 * acc * w.cos(),
                0.2 * gyro,
                0.1 * gyro * w.cos(),
                gyro,
            ];
            for (c, v) in values.into_iter().enumerate() {
                let noise = trunc_normal(rng, spec.imu_noise);
                k[(imu * 6 + c) * n + i] = (v + noise) as f32;
            }
        }
    }
    for (i, &a) in angle.iter().enumerate() {
        k[THIGH_CHANNEL * n + i] = a as f32;
    }
    let image = depth_image(spec, &prof.depth, rng);
    Ok(Stride {
        terrain,
        angle,
        kinematics: Tensor::new(vec![N_CHANNELS, n], k)?,
        image,
    })
}

/// Generates `n_subjects x strides_per_subject` samples. Each subject draws
/// from its own ChaCha stream, so the output is a pure function of the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<StrideDataset> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.n_subjects * spec.strides_per_subject);
    for s in 0..spec.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(s as u64);
        let subject = Subject {
            offset: trunc_normal(&mut rng, spec.subject_offset_deg),
            amplitude: 1.0 + trunc_normal(&mut rng, spec.subject_amplitude_std),
        };
        let terrains = terrain_sequence(spec, spec.strides_per_subject + 1, &mut rng)?;
        let mut prev = stride(spec, &subject, terrains[0], &mut rng)?;
        for (id, &t) in terrains.iter().enumerate().skip(1) {
            let cur = stride(spec, &subject, t, &mut rng)?;
            samples.push(StrideSample {
                kinematics: prev.kinematics.clone(),
                image_prev: prev.image.clone(),
                image_cur: cur.image.clone(),
                target: Tensor::new(vec![spec.points], cur.angle.iter().map(|&a| a as f32).collect())?,
                terrain: cur.terrain,
                prev_terrain: prev.terrain,
                subject: s as u32,
                side: Side::Right,
                stride_id: id as u32,
            });
            prev = cur;
        }
    }
    Ok(StrideDataset::new(samples))
}
