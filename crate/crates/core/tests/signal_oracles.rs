use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sftik_core::signal::{
    calibrate_bias, design_butterworth2, detect_mhe, filter_apply, pair_keyframe, preprocess_depth,
    preprocess_depth_to, resample_linear, segment_strides, DepthFrame, ImuStream, MheConfig, SegmentConfig,
    SkipReason, N_CHANNELS, THIGH_CHANNEL,
};
use sftik_core::{Side, Terrain};
use sftik_tensor::Tensor;

/// Closed-form magnitude of a prewarped second-order Butterworth low-pass.
fn butterworth_magnitude(f: f64, fc: f64, fs: f64) -> f64 {
    let r = (PI * f / fs).tan() / (PI * fc / fs).tan();
    1.0 / (1.0 + r.powi(4)).sqrt()
}

#[test]
fn filter_gain_at_dc_cutoff_and_stopband() {
    let c = design_butterworth2(30.0, 100.0).unwrap();
    assert!((c.magnitude(0.0, 100.0) - 1.0).abs() < 1e-9);
    assert!((c.magnitude(30.0, 100.0) - 0.70711).abs() < 1e-3);
    assert!(c.magnitude(45.0, 100.0) < 0.4);
    assert!(c.is_stable());
    assert!(design_butterworth2(50.0, 100.0).is_err());
}

#[test]
fn impulse_response_dft_matches_transfer_function() {
    let (fc, fs) = (30.0, 100.0);
    let c = design_butterworth2(fc, fs).unwrap();
    let n = 1024;
    let mut impulse = vec![0.0; n];
    impulse[0] = 1.0;
    let h = filter_apply(&c, &impulse).unwrap();
    assert!(h[200..].iter().all(|v| v.abs() < 1e-6));
    for k in 0..n / 2 {
        let w = 2.0 * PI * k as f64 / n as f64;
        let (re, im) = h
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (t, &x)| (re + x * (w * t as f64).cos(), im - x * (w * t as f64).sin()));
        let f = k as f64 * fs / n as f64;
        let dft = (re * re + im * im).sqrt();
        assert!((dft - butterworth_magnitude(f, fc, fs)).abs() < 1e-6, "bin {k}: {dft}");
        assert!((c.response(f, fs).norm() - dft).abs() < 1e-6);
    }
}

#[test]
fn constant_passes_and_45hz_is_attenuated() {
    let c = design_butterworth2(30.0, 100.0).unwrap();
    let y = filter_apply(&c, &[2.5; 500]).unwrap();
    assert!((y[499] - 2.5).abs() < 1e-6);
    let x: Vec<f64> = (0..1000).map(|i| (2.0 * PI * 45.0 * i as f64 / 100.0).sin()).collect();
    let y = filter_apply(&c, &x).unwrap();
    let amp = y[500..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(amp < 0.4, "{amp}");
    assert!(filter_apply(&c, &[]).is_err());
}

fn stream_with_angle(theta: Vec<f64>) -> ImuStream {
    let n = theta.len();
    let mut channels: Vec<Vec<f64>> = (0..N_CHANNELS)
        .map(|c| (0..n).map(|i| (c as f64 + 1.0) * (i as f64 * 0.013).sin()).collect())
        .collect();
    channels[THIGH_CHANNEL] = theta;
    ImuStream::new((0..n).map(|i| i as f64 / 100.0).collect(), channels, Side::Right).unwrap()
}

#[test]
fn calibration_zeroes_the_standstill_mean() {
    let mut theta = vec![3.2; 150];
    theta.extend((0..100).map(|i| i as f64));
    let s = stream_with_angle(theta.clone());
    let cal = calibrate_bias(&s, 0..100).unwrap();
    for (a, b) in cal.thigh_angle().iter().zip(&theta) {
        assert!((a - (b - 3.2)).abs() < 1e-12);
    }
    let mean: f64 = cal.thigh_angle()[..100].iter().sum::<f64>() / 100.0;
    assert!(mean.abs() < 1e-9);
    for c in 0..THIGH_CHANNEL {
        assert_eq!(cal.channels[c], s.channels[c]);
    }
    assert!(calibrate_bias(&s, 0..99).is_err());
}

#[test]
fn sinusoid_boundaries_are_exact() {
    let theta: Vec<f64> = (0..500).map(|i| 20.0 * (2.0 * PI * i as f64 / 100.0).sin() + 5.0).collect();
    assert_eq!(detect_mhe(&theta, &MheConfig::default()).unwrap(), vec![75, 175, 275, 375, 475]);
}

/// Direct definition: strictly below everything earlier in the window, not
/// above anything later, and prominent enough.
fn brute_force_mhe(theta: &[f64], d: usize, min_prominence: f64) -> Vec<usize> {
    let n = theta.len();
    let mut out = Vec::new();
    for i in 1..n - 1 {
        let reach = d.max(2);
        let lo = i.saturating_sub(reach - 1);
        let hi = (i + reach).min(n);
        let left_ok = (lo..i).all(|j| theta[j] > theta[i]);
        let right_ok = (i + 1..hi).all(|j| theta[j] >= theta[i]);
        if !(left_ok && right_ok) {
            continue;
        }
        let mut left_peak = theta[i];
        let mut j = i;
        while j > 0 && theta[j - 1] >= theta[i] {
            j -= 1;
            left_peak = left_peak.max(theta[j]);
        }
        let mut right_peak = theta[i];
        let mut j = i;
        while j + 1 < n && theta[j + 1] >= theta[i] {
            j += 1;
            right_peak = right_peak.max(theta[j]);
        }
        if left_peak.min(right_peak) - theta[i] >= min_prominence {
            out.push(i);
        }
    }
    out
}

#[test]
fn detect_mhe_equals_brute_force_on_random_signals() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut total = 0;
    for case in 0..100 {
        let n = rng.random_range(120..700);
        let d = rng.random_range(1..80usize);
        let prom = [0.0, 2.0, 5.0, 12.0][case % 4];
        let freqs: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| (rng.random_range(0.2..3.0), rng.random_range(1.0..20.0), rng.random_range(0.0..6.3)))
            .collect();
        let mut theta: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 100.0;
                freqs.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum::<f64>()
                    + rng.random_range(-1.0..1.0)
            })
            .collect();
        if case % 3 == 0 {
            // coarse quantization produces plateaus and exact ties
            theta.iter_mut().for_each(|v| *v = v.round());
        }
        if n <= d {
            continue;
        }
        let cfg = MheConfig {
            min_distance_samples: d,
            prominence_deg: prom,
        };
        let got = detect_mhe(&theta, &cfg).unwrap();
        assert_eq!(got, brute_force_mhe(&theta, d, prom), "case {case}");
        total += got.len();
    }
    assert!(total > 100);
}

/// Minima of `-20 cos` exactly at each boundary time, one cosine period per stride.
fn strided_angle(boundaries_s: &[f64], total_s: f64) -> Vec<f64> {
    let n = (total_s * 100.0).round() as usize;
    let first = boundaries_s[0];
    let last = *boundaries_s.last().unwrap();
    let mut knots = vec![first - 1.0];
    knots.extend_from_slice(boundaries_s);
    knots.push(last + 1.0);
    (0..n)
        .map(|i| {
            let t = i as f64 / 100.0;
            let k = knots.windows(2).position(|w| t < w[1]).unwrap_or(knots.len() - 2);
            let (t0, t1) = (knots[k], knots[k + 1]);
            -20.0 * (2.0 * PI * (t - t0) / (t1 - t0)).cos() + 5.0
        })
        .collect()
}

fn frames_every(step_s: f64, until_s: f64) -> Vec<DepthFrame> {
    let terrains = Terrain::ALL;
    (0..)
        .map(|i| i as f64 * step_s)
        .take_while(|&t| t <= until_s)
        .enumerate()
        .map(|(i, t)| DepthFrame {
            timestamp: t,
            pixels: Arc::new(Tensor::full(vec![1, 4, 4], i as f32 / 100.0)),
            terrain: terrains[i % terrains.len()],
        })
        .collect()
}

/// Piecewise-linear oracle over the inclusive sample range.
fn interp(series: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let x = k as f64 * (series.len() - 1) as f64 / (n - 1) as f64;
            let i = (x.floor() as usize).min(series.len() - 2);
            series[i] + (x - i as f64) * (series[i + 1] - series[i])
        })
        .collect()
}

#[test]
fn five_strides_give_four_samples() {
    let b = [0.5, 1.5, 2.5, 3.5, 4.5, 5.5];
    let theta = strided_angle(&b, 6.5);
    let stream = stream_with_angle(theta.clone());
    let frames = frames_every(0.25, 6.5);
    let seg = segment_strides(&stream, &frames, 3, &SegmentConfig::default()).unwrap();
    assert_eq!(seg.boundaries, vec![50, 150, 250, 350, 450, 550]);
    assert_eq!(seg.samples.len(), 4);
    for (j, s) in seg.samples.iter().enumerate() {
        let prev = seg.boundaries[j]..=seg.boundaries[j + 1];
        let cur = seg.boundaries[j + 1]..=seg.boundaries[j + 2];
        let want_a = interp(&theta[cur.clone()], 100);
        for (a, w) in s.target.data().iter().zip(&want_a) {
            assert!((*a as f64 - w).abs() < 1e-4);
        }
        for c in 0..N_CHANNELS {
            let want_k = interp(&stream.channels[c][prev.clone()], 100);
            for (k, w) in s.kinematics.row(c).iter().zip(&want_k) {
                assert!((*k as f64 - w).abs() < 1e-4);
            }
        }
        // key-frames at 0.5 s, 1.5 s, ... are frames 2, 6, 10, ...
        let fp = pair_keyframe(b[j], &frames.iter().map(|f| f.timestamp).collect::<Vec<_>>()).unwrap();
        assert!(Arc::ptr_eq(&s.image_prev, &frames[fp].pixels));
        assert!(Arc::ptr_eq(&s.image_cur, &frames[fp + 4].pixels));
        assert_eq!(s.terrain, frames[fp + 4].terrain);
        assert_eq!(s.prev_terrain, frames[fp].terrain);
        assert_eq!(s.subject, 3);
        assert_eq!(s.stride_id, j as u32 + 1);
    }
}

#[test]
fn long_stride_is_dropped_and_neighbors_not_bridged() {
    let b = [0.5, 1.5, 2.5, 5.5, 6.5, 7.5];
    let stream = stream_with_angle(strided_angle(&b, 8.5));
    let frames = frames_every(0.25, 8.5);
    let seg = segment_strides(&stream, &frames, 0, &SegmentConfig::default()).unwrap();
    assert_eq!(seg.boundaries, vec![50, 150, 250, 550, 650, 750]);
    let ids: Vec<u32> = seg.samples.iter().map(|s| s.stride_id).collect();
    assert_eq!(ids, vec![1, 4]);
    assert_eq!(seg.skipped.len(), 1);
    assert_eq!(seg.skipped[0].stride_index, 2);
    match seg.skipped[0].reason {
        SkipReason::Duration { seconds } => assert!((seconds - 3.0).abs() < 1e-9),
        ref r => panic!("{r:?}"),
    }
}

#[test]
fn single_stride_and_missing_keyframe() {
    let stream = stream_with_angle(strided_angle(&[0.5, 1.5], 2.5));
    let seg = segment_strides(&stream, &frames_every(0.25, 2.5), 0, &SegmentConfig::default()).unwrap();
    assert_eq!(seg.boundaries.len(), 2);
    assert!(seg.samples.is_empty());

    let b = [0.5, 1.5, 2.5, 3.5];
    let stream = stream_with_angle(strided_angle(&b, 4.5));
    let late: Vec<DepthFrame> = frames_every(0.25, 4.5).into_iter().filter(|f| f.timestamp >= 0.9).collect();
    let seg = segment_strides(&stream, &late, 0, &SegmentConfig::default()).unwrap();
    assert_eq!(seg.samples.len(), 1);
    assert!(matches!(seg.skipped[0].reason, SkipReason::NoKeyframe { .. }));
}

/// Half-pixel-center bilinear sample written straight from the definition.
fn bilinear_oracle(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..oh {
        for j in 0..ow {
            let y = ((i as f64 + 0.5) * h as f64 / oh as f64 - 0.5).max(0.0).min((h - 1) as f64);
            let x = ((j as f64 + 0.5) * w as f64 / ow as f64 - 0.5).max(0.0).min((w - 1) as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (dy, dx) = (y - y0 as f64, x - x0 as f64);
            let at = |r: usize, c: usize| src[r * w + c];
            out.push(
                at(y0, x0) * (1.0 - dy) * (1.0 - dx)
                    + at(y0, x1) * (1.0 - dy) * dx
                    + at(y1, x0) * dy * (1.0 - dx)
                    + at(y1, x1) * dy * dx,
            );
        }
    }
    out
}

#[test]
fn checkerboard_448_matches_bilinear_oracle() {
    for square in [1usize, 3, 8] {
        let n = 448;
        let raw: Vec<f32> = (0..n * n)
            .map(|p| if ((p / n) / square + (p % n) / square) % 2 == 0 { 0.5 } else { 4.0 })
            .collect();
        let out = preprocess_depth(&Tensor::new(vec![n, n], raw.clone()).unwrap()).unwrap();
        assert_eq!(out.shape(), &[1, 224, 224]);
        let norm: Vec<f64> = raw.iter().map(|&v| v as f64 / 5.0).collect();
        let want = bilinear_oracle(&norm, n, n, 224, 224);
        for (a, b) in out.data().iter().zip(&want) {
            assert!((*a as f64 - b).abs() < 1e-6, "square {square}: {a} vs {b}");
        }
        if square == 1 {
            assert!(out.data().iter().all(|v| (v - 0.45).abs() < 1e-6));
        }
    }
}

#[test]
fn depth_examples() {
    let plane = |d: f32| Tensor::full(vec![60, 80], d);
    assert!(preprocess_depth(&plane(7.0)).unwrap().data().iter().all(|&v| v == 1.0));
    assert!(preprocess_depth(&plane(2.5)).unwrap().data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    assert!(preprocess_depth(&Tensor::new(vec![0, 4], vec![]).unwrap()).is_err());
}

#[test]
fn keyframe_pairing_examples() {
    let frames = [0.93, 1.00, 1.07];
    assert_eq!(pair_keyframe(1.00, &frames), Some(1));
    assert_eq!(pair_keyframe(1.05, &frames), Some(1));
    assert_eq!(pair_keyframe(0.90, &frames), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resample_is_exact_on_affine(len in 2usize..300, a in -50.0f64..50.0, b in -5.0f64..5.0, n in 2usize..200) {
        let series: Vec<f64> = (0..len).map(|i| a + b * i as f64 / (len - 1) as f64).collect();
        let out = resample_linear(&series, n).unwrap();
        prop_assert_eq!(out[0], series[0]);
        prop_assert_eq!(out[n - 1], series[len - 1]);
        for (k, v) in out.iter().enumerate() {
            let want = a + b * k as f64 / (n - 1) as f64;
            prop_assert!((v - want).abs() < 1e-12 * (1.0 + a.abs() + b.abs()));
        }
    }

    #[test]
    fn resample_is_identity_on_100(series in prop::collection::vec(-90.0f64..90.0, 100)) {
        prop_assert_eq!(resample_linear(&series, 100).unwrap(), series);
    }

    #[test]
    fn depth_output_stays_in_unit_range(
        h in 1usize..40, w in 1usize..40, oh in 1usize..40, ow in 1usize..40, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f32> = (0..h * w).map(|_| rng.random_range(0.0f32..20.0)).collect();
        let out = preprocess_depth_to(&Tensor::new(vec![h, w], raw).unwrap(), oh, ow).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn filter_poles_inside_unit_circle(fc in 0.5f64..49.0) {
        let c = design_butterworth2(fc, 100.0).unwrap();
        let r = c.poles().iter().map(|p| p.norm()).fold(0.0, f64::max);
        prop_assert!(r < 1.0);
        let mut impulse = vec![0.0; 400];
        impulse[0] = 1.0;
        let h = filter_apply(&c, &impulse).unwrap();
        // near DC or Nyquist the poles sit close to the circle and decay is slow
        prop_assert!(r.powi(200) > 1e-9 || h[200..].iter().all(|v| v.abs() < 1e-6));
    }
}
