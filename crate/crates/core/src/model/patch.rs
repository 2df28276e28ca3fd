use sftik_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, PatchMode};

/// Cuts a `C x H x W` image into a `tokens x patch_dim` matrix.
///
/// Patch contents are flattened channel-major, then row-major within the patch.
pub fn patchify_image<T: Scalar>(img: &Tensor<T>, cfg: &ModelConfig) -> Result<Tensor<T>> {
    let (c, h, w) = (cfg.image_channels, cfg.image_height, cfg.image_width);
    if img.shape() != [c, h, w] {
        return Err(Error::Dimension(format!(
            "image shape {:?} does not match configured {:?}",
            img.shape(),
            [c, h, w]
        )));
    }
    let p = cfg.image_patch;
    let (ph, pw, grid_w) = match cfg.image_patch_mode {
        PatchMode::Width => (p, w, 1),
        PatchMode::Height => (h, p, w / p),
        PatchMode::Square => (p, p, w / p),
    };
    if p == 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Config(format!("{h}x{w} image not divisible into {ph}x{pw} patches")));
    }
    let n = (h / ph) * (w / pw);
    let src = img.data();
    let mut out = Vec::with_capacity(c * h * w);
    for t in 0..n {
        let (r0, c0) = ((t / grid_w) * ph, (t % grid_w) * pw);
        for ch in 0..c {
            for r in r0..r0 + ph {
                let base = (ch * h + r) * w;
                out.extend_from_slice(&src[base + c0..base + c0 + pw]);
            }
        }
    }
    Ok(Tensor::new(vec![n, c * ph * pw], out)?)
}

/// Slides a window of `imu_patch_len` samples with step `imu_patch_stride`
/// over `channels x series_len` kinematics; each token holds every channel
/// of one window, channel-major.
pub fn patchify_imu<T: Scalar>(k: &Tensor<T>, cfg: &ModelConfig) -> Result<Tensor<T>> {
    let (ch, n) = (cfg.kin_channels, cfg.series_len);
    if k.shape() != [ch, n] {
        return Err(Error::Dimension(format!(
            "kinematics shape {:?} does not match configured {:?}",
            k.shape(),
            [ch, n]
        )));
    }
    let (l, s) = (cfg.imu_patch_len, cfg.imu_patch_stride);
    if l == 0 || s == 0 || l > n || (n - l) % s != 0 {
        return Err(Error::Config(format!(
            "series length {n} is not divisible by patch length {l} / stride {s}"
        )));
    }
    let tokens = (n - l) / s + 1;
    let src = k.data();
    let mut out = Vec::with_capacity(tokens * ch * l);
    for t in 0..tokens {
        for c in 0..ch {
            out.extend_from_slice(&src[c * n + t * s..c * n + t * s + l]);
        }
    }
    Ok(Tensor::new(vec![tokens, ch * l], out)?)
}
