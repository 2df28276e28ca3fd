use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sftik_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::config::{Fusion, ModelConfig};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec { name: name.into(), shape: shape.to_vec(), init }
}

/// Names of the transformer stacks and their depths, in forward order.
pub(crate) fn stacks(cfg: &ModelConfig) -> Vec<(&'static str, usize)> {
    match cfg.fusion {
        Fusion::Sandwich => vec![("stage1_fused", cfg.n1), ("stage1_image", cfg.n1), ("stage2", cfg.n2)],
        Fusion::Early => vec![("joint", cfg.n1 + cfg.n2)],
        Fusion::Late => vec![
            ("stage1_imu", cfg.n1),
            ("stage1_image_prev", cfg.n1),
            ("stage1_image", cfg.n1),
            ("stage2", cfg.n2),
        ],
    }
}

fn block_layout(prefix: &str, cfg: &ModelConfig, out: &mut Vec<ParamSpec>) {
    let d = cfg.d_emb;
    let h = d * cfg.mlp_ratio;
    out.push(spec(format!("{prefix}.ln1.gamma"), &[d], Init::Ones));
    out.push(spec(format!("{prefix}.ln1.beta"), &[d], Init::Zeros));
    for w in ["q", "k", "v", "o"] {
        out.push(spec(format!("{prefix}.attn.w{w}"), &[d, d], Init::TruncNormal));
        // a key bias shifts each score row uniformly and cancels in the softmax
        if w != "k" {
            out.push(spec(format!("{prefix}.attn.b{w}"), &[d], Init::Zeros));
        }
    }
    out.push(spec(format!("{prefix}.ln2.gamma"), &[d], Init::Ones));
    out.push(spec(format!("{prefix}.ln2.beta"), &[d], Init::Zeros));
    out.push(spec(format!("{prefix}.mlp.fc1.weight"), &[d, h], Init::TruncNormal));
    out.push(spec(format!("{prefix}.mlp.fc1.bias"), &[h], Init::Zeros));
    out.push(spec(format!("{prefix}.mlp.fc2.weight"), &[h, d], Init::TruncNormal));
    out.push(spec(format!("{prefix}.mlp.fc2.bias"), &[d], Init::Zeros));
}

/// Every learnable tensor of the configured model, in initialization order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.d_emb;
    let mut out = Vec::new();
    // one image embedding serves both the previous and the current frame
    out.push(spec("image_proj.weight", &[cfg.image_patch_dim(), d], Init::TruncNormal));
    out.push(spec("image_proj.bias", &[d], Init::Zeros));
    out.push(spec("image_posenc", &[cfg.n_image_tokens(), d], Init::TruncNormal));
    if cfg.uses_imu() {
        out.push(spec("imu_proj.weight", &[cfg.imu_patch_dim(), d], Init::TruncNormal));
        out.push(spec("imu_proj.bias", &[d], Init::Zeros));
        out.push(spec("imu_posenc", &[cfg.n_imu_tokens(), d], Init::TruncNormal));
    }
    for (stack, depth) in stacks(cfg) {
        for i in 0..depth {
            block_layout(&format!("{stack}.{i}"), cfg, &mut out);
        }
    }
    out.push(spec("head.fc1.weight", &[d, d], Init::TruncNormal));
    out.push(spec("head.fc1.bias", &[d], Init::Zeros));
    out.push(spec("head.fc2.weight", &[d, cfg.out_len], Init::TruncNormal));
    out.push(spec("head.fc2.bias", &[cfg.out_len], Init::Zeros));
    out
}

/// Learnable scalars in one transformer block.
pub fn per_block_params(cfg: &ModelConfig) -> u64 {
    let (d, r) = (cfg.d_emb as u64, cfg.mlp_ratio as u64);
    (4 + 2 * r) * d * d + (8 + r) * d
}

/// Closed-form parameter count.
pub fn count_params(cfg: &ModelConfig) -> u64 {
    let d = cfg.d_emb as u64;
    let image = (cfg.image_patch_dim() as u64 + 1 + cfg.n_image_tokens() as u64) * d;
    let imu = if cfg.uses_imu() {
        (cfg.imu_patch_dim() as u64 + 1 + cfg.n_imu_tokens() as u64) * d
    } else {
        0
    };
    let blocks: u64 = stacks(cfg).iter().map(|&(_, n)| n as u64).sum();
    let out = cfg.out_len as u64;
    let head = d * d + d + d * out + out;
    image + imu + blocks * per_block_params(cfg) + head
}

/// Named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn numel(&self) -> u64 {
        self.tensors.values().map(|t| t.numel() as u64).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Checks names and shapes against the layout of `cfg`.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let layout = param_layout(cfg);
        if layout.len() != self.tensors.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for s in &layout {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(())
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng, dist: &Normal<f64>) -> f64 {
    loop {
        let x = dist.sample(rng);
        if x.abs() <= 2.0 * INIT_STD {
            return x;
        }
    }
}

/// Seeded initialization: truncated normal weights and positional encodings,
/// zero biases and norm shifts, unit norm scales.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut tensors = BTreeMap::new();
    for s in param_layout(cfg) {
        let t = match s.init {
            Init::Zeros => Tensor::zeros(s.shape),
            Init::Ones => Tensor::ones(s.shape),
            Init::TruncNormal => Tensor::from_fn(s.shape, |_| trunc_normal(&mut rng, &dist) as f32),
        };
        tensors.insert(s.name, t);
    }
    Ok(ModelParams { tensors })
}

/// Parameters registered on a tape.
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn register<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>, trainable: bool) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (name, t) in &params.tensors {
            vars.insert(name.clone(), tape.leaf(t.clone(), trainable)?);
        }
        Ok(Self { vars })
    }

    /// Registers parallel name/tensor slices, e.g. an optimizer's flat view.
    pub fn register_named<T: Scalar>(
        tape: &mut Tape<T>,
        names: &[String],
        tensors: &[Tensor<T>],
        trainable: bool,
    ) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Contract(format!("{} names for {} tensors", names.len(), tensors.len())));
        }
        let mut vars = BTreeMap::new();
        for (name, t) in names.iter().zip(tensors) {
            vars.insert(name.clone(), tape.leaf(t.clone(), trainable)?);
        }
        Ok(Self { vars })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}
