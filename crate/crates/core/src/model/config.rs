use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a depth image is cut into tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchMode {
    /// Full-width horizontal bands `patch` rows tall.
    Width,
    /// Full-height vertical bands `patch` columns wide.
    Height,
    /// `patch x patch` squares.
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Kinematics + previous image, current image, then a joint stage.
    Sandwich,
    /// All token sets concatenated before the first block.
    Early,
    /// Each token set encoded separately, then a joint stage.
    Late,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    /// Stage 1a sees only the kinematics tokens.
    NoPrevImage,
    /// Stage 1a sees only the previous-image tokens.
    NoImu,
}

impl Ablation {
    pub fn from_flags(no_prev_image: bool, no_imu: bool) -> Result<Self> {
        match (no_prev_image, no_imu) {
            (false, false) => Ok(Ablation::None),
            (true, false) => Ok(Ablation::NoPrevImage),
            (false, true) => Ok(Ablation::NoImu),
            (true, true) => Err(Error::Config(
                "no_prev_image and no_imu cannot be combined".into(),
            )),
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub n1: usize,
    pub n2: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub image_patch_mode: PatchMode,
    pub image_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Band thickness (width/height modes) or square side.
    pub image_patch: usize,
    pub kin_channels: usize,
    pub imu_patch_len: usize,
    pub imu_patch_stride: usize,
    pub series_len: usize,
    pub out_len: usize,
    pub fusion: Fusion,
    pub ablation: Ablation,
    /// Dropout on both residual branches during training.
    pub dropout: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_emb: 768,
            n1: 6,
            n2: 6,
            heads: 12,
            mlp_ratio: 4,
            image_patch_mode: PatchMode::Width,
            image_channels: 1,
            image_height: 224,
            image_width: 224,
            image_patch: 16,
            kin_channels: 19,
            imu_patch_len: 10,
            imu_patch_stride: 10,
            series_len: 100,
            out_len: 100,
            fusion: Fusion::Sandwich,
            ablation: Ablation::None,
            dropout: 0.0,
            ln_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    /// Desk-scale training configuration.
    pub fn toy() -> Self {
        Self {
            d_emb: 64,
            n1: 2,
            n2: 2,
            heads: 4,
            ..Self::default()
        }
    }

    /// Tiny configuration for finite-difference checks: 16x16 images cut
    /// into 4-row bands, 19x20 kinematics in 5-sample patches.
    pub fn toy_gradcheck() -> Self {
        Self {
            d_emb: 32,
            n1: 1,
            n2: 1,
            heads: 2,
            image_height: 16,
            image_width: 16,
            image_patch: 4,
            imu_patch_len: 5,
            imu_patch_stride: 5,
            series_len: 20,
            out_len: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.d_emb == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return err("d_emb, heads and mlp_ratio must be positive".into());
        }
        if self.d_emb % self.heads != 0 {
            return err(format!("d_emb {} not divisible by {} heads", self.d_emb, self.heads));
        }
        if self.n1 + self.n2 == 0 {
            return err("model needs at least one transformer block".into());
        }
        if self.image_channels == 0 || self.kin_channels == 0 || self.out_len == 0 {
            return err("channel counts and out_len must be positive".into());
        }
        let p = self.image_patch;
        let (h_ok, w_ok) = match self.image_patch_mode {
            PatchMode::Width => (self.image_height % p.max(1) == 0, true),
            PatchMode::Height => (true, self.image_width % p.max(1) == 0),
            PatchMode::Square => (
                self.image_height % p.max(1) == 0,
                self.image_width % p.max(1) == 0,
            ),
        };
        if p == 0 || self.image_height == 0 || self.image_width == 0 || !h_ok || !w_ok {
            return err(format!(
                "{}x{} image not divisible by {:?} patch {p}",
                self.image_height, self.image_width, self.image_patch_mode
            ));
        }
        let (l, s, n) = (self.imu_patch_len, self.imu_patch_stride, self.series_len);
        if l == 0 || s == 0 || l > n || (n - l) % s != 0 {
            return err(format!(
                "series length {n} with patch length {l} and stride {s} is not evenly divisible"
            ));
        }
        if self.ablation != Ablation::None && self.fusion != Fusion::Sandwich {
            return err("information ablations apply to sandwich fusion only".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.ln_eps > 0.0) {
            return err("ln_eps must be positive".into());
        }
        Ok(())
    }

    pub fn n_image_tokens(&self) -> usize {
        let p = self.image_patch;
        match self.image_patch_mode {
            PatchMode::Width => self.image_height / p,
            PatchMode::Height => self.image_width / p,
            PatchMode::Square => (self.image_height / p) * (self.image_width / p),
        }
    }

    pub fn image_patch_dim(&self) -> usize {
        let p = self.image_patch;
        self.image_channels
            * match self.image_patch_mode {
                PatchMode::Width => p * self.image_width,
                PatchMode::Height => self.image_height * p,
                PatchMode::Square => p * p,
            }
    }

    pub fn n_imu_tokens(&self) -> usize {
        (self.series_len - self.imu_patch_len) / self.imu_patch_stride + 1
    }

    pub fn imu_patch_dim(&self) -> usize {
        self.kin_channels * self.imu_patch_len
    }

    pub fn head_dim(&self) -> usize {
        self.d_emb / self.heads
    }

    pub fn uses_imu(&self) -> bool {
        self.ablation != Ablation::NoImu
    }

    pub fn uses_prev_image(&self) -> bool {
        self.ablation != Ablation::NoPrevImage
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_token_geometry() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!((c.n_image_tokens(), c.image_patch_dim()), (14, 3584));
        assert_eq!((c.n_imu_tokens(), c.imu_patch_dim()), (10, 190));
        let sq = ModelConfig {
            image_patch_mode: PatchMode::Square,
            ..c
        };
        assert_eq!((sq.n_image_tokens(), sq.image_patch_dim()), (196, 256));
    }

    #[test]
    fn invalid_configs() {
        let bad_heads = ModelConfig { heads: 5, ..ModelConfig::default() };
        assert!(matches!(bad_heads.validate(), Err(Error::Config(_))));
        let bad_patch = ModelConfig { imu_patch_len: 10, imu_patch_stride: 7, ..ModelConfig::default() };
        assert!(bad_patch.validate().is_err());
        let bad_image = ModelConfig { image_patch: 15, ..ModelConfig::default() };
        assert!(bad_image.validate().is_err());
        assert!(Ablation::from_flags(true, true).is_err());
        let ablated_early = ModelConfig {
            fusion: Fusion::Early,
            ablation: Ablation::NoImu,
            ..ModelConfig::default()
        };
        assert!(ablated_early.validate().is_err());
        ModelConfig::toy().validate().unwrap();
        ModelConfig::toy_gradcheck().validate().unwrap();
    }

    #[test]
    fn json_uses_snake_case_enums() {
        let c: ModelConfig =
            serde_json::from_str(r#"{"d_emb": 64, "fusion": "late", "image_patch_mode": "square"}"#).unwrap();
        assert_eq!(c.fusion, Fusion::Late);
        assert_eq!(c.n1, 6);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"drop_rate": 0.1}"#).is_err());
        let s = serde_json::to_string(&ModelConfig { ablation: Ablation::NoPrevImage, ..Default::default() }).unwrap();
        assert!(s.contains("\"no_prev_image\""));
    }
}
