use std::sync::Arc;

use sftik_tensor::Tensor;

use crate::error::{Error, Result};
use crate::types::Terrain;

/// Depth beyond this range (meters) is clipped before normalization.
pub const MAX_DEPTH_M: f64 = 5.0;
pub const IMAGE_SIZE: usize = 224;

/// A preprocessed depth key-frame candidate with its terrain annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFrame {
    pub timestamp: f64,
    /// `1 x H x W`, values in `[0, 1]`.
    pub pixels: Arc<Tensor<f32>>,
    pub terrain: Terrain,
}

/// Clip to `[0, 5]` m, divide by 5 and resize to `1 x 224 x 224`.
pub fn preprocess_depth(raw: &Tensor<f32>) -> Result<Tensor<f32>> {
    preprocess_depth_to(raw, IMAGE_SIZE, IMAGE_SIZE)
}

pub fn preprocess_depth_to(raw: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (h, w) = match raw.shape() {
        [h, w] | [1, h, w] => (*h, *w),
        s => return Err(Error::Contract(format!("depth image must be H x W, got {s:?}"))),
    };
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Contract("empty depth image".into()));
    }
    if let Some(bad) = raw.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Contract(format!("depth values must be nonnegative, found {bad}")));
    }
    let max = MAX_DEPTH_M as f32;
    let normalized: Vec<f32> = raw.data().iter().map(|&d| d.min(max) / max).collect();
    let resized = resize_bilinear(&normalized, h, w, out_h, out_w);
    Ok(Tensor::new(vec![1, out_h, out_w], resized)?)
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (pos - i0 as f64) as f32)
            })
            .collect()
    };
    let rows = axis(h, out_h);
    let cols = axis(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Latest frame at or before `mhe_time`; `frame_timestamps` must be sorted.
pub fn pair_keyframe(mhe_time: f64, frame_timestamps: &[f64]) -> Option<usize> {
    frame_timestamps
        .partition_point(|&t| t <= mhe_time)
        .checked_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_planes() {
        let far = Tensor::full(vec![30, 40], 7.0f32);
        let img = preprocess_depth(&far).unwrap();
        assert_eq!(img.shape(), &[1, 224, 224]);
        assert!(img.data().iter().all(|&v| v == 1.0));
        let mid = Tensor::full(vec![480, 640], 2.5f32);
        assert!(preprocess_depth(&mid).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn empty_or_negative_input_rejected() {
        assert!(preprocess_depth(&Tensor::zeros(vec![0, 5])).is_err());
        assert!(preprocess_depth(&Tensor::full(vec![2, 2], -1.0)).is_err());
    }

    #[test]
    fn keyframe_pairing() {
        let frames = [0.93, 1.00, 1.07];
        assert_eq!(pair_keyframe(1.00, &frames), Some(1));
        assert_eq!(pair_keyframe(1.05, &frames), Some(1));
        assert_eq!(pair_keyframe(0.90, &frames), None);
        assert_eq!(pair_keyframe(9.0, &frames), Some(2));
    }
}
