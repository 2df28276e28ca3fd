use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sftik_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::block::transformer_block;
use crate::model::config::{Fusion, ModelConfig};
use crate::model::params::{stacks, ParamVars};
use crate::model::patch::{patchify_image, patchify_imu};

/// One stride's inputs: previous-stride kinematics and the two key-frames.
#[derive(Clone, Copy)]
pub struct ModelInput<'a, T: Scalar> {
    pub kinematics: &'a Tensor<T>,
    pub image_prev: &'a Tensor<T>,
    pub image_cur: &'a Tensor<T>,
}

/// Expected token count and depth of one transformer stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StagePlan {
    pub name: String,
    pub tokens: usize,
    pub blocks: usize,
}

/// What a forward pass actually ran.
pub type StageTrace = StagePlan;

pub struct ForwardOutput {
    /// `1 x out_len`.
    pub prediction: Var,
    /// Mean-pooled final tokens, `1 x d_emb`.
    pub pooled: Var,
    pub stages: Vec<StageTrace>,
    /// Attention matrices of every head of every block, in execution order.
    pub attention: Vec<Var>,
}

pub fn stage_plan(cfg: &ModelConfig) -> Vec<StagePlan> {
    let img = cfg.n_image_tokens();
    let imu = cfg.n_imu_tokens();
    let fused = if cfg.uses_imu() { imu } else { 0 } + if cfg.uses_prev_image() { img } else { 0 };
    let tokens: Vec<usize> = match cfg.fusion {
        Fusion::Sandwich => vec![fused, img, fused + img],
        Fusion::Early => vec![imu + 2 * img],
        Fusion::Late => vec![imu, img, img, imu + 2 * img],
    };
    stacks(cfg)
        .into_iter()
        .zip(tokens)
        .map(|((name, blocks), tokens)| StagePlan { name: name.to_string(), tokens, blocks })
        .collect()
}

/// `patches . W + b + posenc` with the `image` or `imu` embedding.
pub fn embed<T: Scalar>(tape: &mut Tape<T>, patches: Tensor<T>, vars: &ParamVars, kind: &str) -> Result<Var> {
    Ok(embed_many(tape, vec![patches], vars, kind)?[0])
}

/// Embeds several equally sized patch matrices with a single projection
/// product, then adds the positional encoding to each.
fn embed_many<T: Scalar>(tape: &mut Tape<T>, patches: Vec<Tensor<T>>, vars: &ParamVars, kind: &str) -> Result<Vec<Var>> {
    let w = vars.get(&format!("{kind}_proj.weight"))?;
    let pos = vars.get(&format!("{kind}_posenc"))?;
    let (w_in, _) = tape.value(w).dims2()?;
    let (pos_rows, _) = tape.value(pos).dims2()?;
    let mut data = Vec::with_capacity(patches.len() * pos_rows * w_in);
    for p in &patches {
        let (rows, cols) = p.dims2()?;
        if cols != w_in {
            return Err(Error::Dimension(format!("{kind} patch width {cols}, projection expects {w_in}")));
        }
        if rows != pos_rows {
            return Err(Error::Dimension(format!("{rows} {kind} tokens, positional encoding has {pos_rows}")));
        }
        data.extend_from_slice(p.data());
    }
    let x = tape.constant(Tensor::new(vec![patches.len() * pos_rows, w_in], data)?)?;
    let y = tape.matmul(x, w)?;
    let y = tape.add_row(y, vars.get(&format!("{kind}_proj.bias"))?)?;
    (0..patches.len())
        .map(|i| {
            let rows = if patches.len() == 1 { y } else { tape.slice_rows(y, i * pos_rows, pos_rows)? };
            Ok(tape.add(rows, pos)?)
        })
        .collect()
}

/// Mean pooling over tokens, then a two-layer feed-forward network.
/// Returns `(pooled, prediction)`.
pub fn head<T: Scalar>(tape: &mut Tape<T>, tokens: Var, vars: &ParamVars) -> Result<(Var, Var)> {
    let (n, _) = tape.try_value(tokens)?.dims2()?;
    if n == 0 {
        return Err(Error::Contract("head received an empty token sequence".into()));
    }
    let pooled = tape.mean_rows(tokens)?;
    let h = tape.matmul(pooled, vars.get("head.fc1.weight")?)?;
    let h = tape.add_row(h, vars.get("head.fc1.bias")?)?;
    let h = tape.gelu(h)?;
    let y = tape.matmul(h, vars.get("head.fc2.weight")?)?;
    let y = tape.add_row(y, vars.get("head.fc2.bias")?)?;
    Ok((pooled, y))
}

struct Runner<'a> {
    vars: &'a ParamVars,
    cfg: &'a ModelConfig,
    rng: Option<ChaCha8Rng>,
    stages: Vec<StageTrace>,
    attention: Vec<Var>,
}

impl Runner<'_> {
    fn stack<T: Scalar>(&mut self, tape: &mut Tape<T>, mut x: Var, name: &str, depth: usize) -> Result<Var> {
        let (tokens, _) = tape.value(x).dims2()?;
        for i in 0..depth {
            let b = transformer_block(tape, x, self.vars, &format!("{name}.{i}"), self.cfg, self.rng.as_mut())?;
            self.attention.extend(b.attention);
            x = b.out;
        }
        self.stages.push(StageTrace { name: name.to_string(), tokens, blocks: depth });
        Ok(x)
    }
}

fn concat<T: Scalar>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Var> {
    Ok(if parts.len() == 1 { parts[0] } else { tape.concat_rows(parts)? })
}

/// Runs the configured fusion variant. `dropout_seed` enables training-mode
/// dropout when the configured rate is nonzero.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    input: ModelInput<'_, T>,
    cfg: &ModelConfig,
    dropout_seed: Option<u64>,
) -> Result<ForwardOutput> {
    let seeds = dropout_seed.map(|s| vec![s]);
    Ok(forward_batch(tape, vars, &[input], cfg, seeds.as_deref())?.remove(0))
}

/// [`forward`] over several samples on one tape. Patch embeddings of the
/// whole batch share one projection product; everything after is per sample.
pub fn forward_batch<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    inputs: &[ModelInput<'_, T>],
    cfg: &ModelConfig,
    dropout_seeds: Option<&[u64]>,
) -> Result<Vec<ForwardOutput>> {
    cfg.validate()?;
    if let Some(seeds) = dropout_seeds {
        if seeds.len() != inputs.len() {
            return Err(Error::Contract(format!("{} dropout seeds for {} inputs", seeds.len(), inputs.len())));
        }
    }
    let per = 1 + cfg.uses_prev_image() as usize;
    let mut images = Vec::with_capacity(inputs.len() * per);
    for input in inputs {
        images.push(patchify_image(input.image_cur, cfg)?);
        if cfg.uses_prev_image() {
            images.push(patchify_image(input.image_prev, cfg)?);
        }
    }
    let images = embed_many(tape, images, vars, "image")?;
    let imu = if cfg.uses_imu() {
        let k = inputs.iter().map(|i| patchify_imu(i.kinematics, cfg)).collect::<Result<Vec<_>>>()?;
        embed_many(tape, k, vars, "imu")?
    } else {
        Vec::new()
    };

    let mut outputs = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let p_cur = images[i * per];
        let p_prev = cfg.uses_prev_image().then(|| images[i * per + 1]);
        let p_k = imu.get(i).copied();
        let seed = dropout_seeds.map(|s| s[i]);
        outputs.push(fuse(tape, vars, cfg, seed, p_k, p_prev, p_cur)?);
    }
    Ok(outputs)
}

fn fuse<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    cfg: &ModelConfig,
    dropout_seed: Option<u64>,
    p_k: Option<Var>,
    p_prev: Option<Var>,
    p_cur: Var,
) -> Result<ForwardOutput> {
    let mut r = Runner {
        vars,
        cfg,
        rng: dropout_seed.filter(|_| cfg.dropout > 0.0).map(ChaCha8Rng::seed_from_u64),
        stages: Vec::new(),
        attention: Vec::new(),
    };
    let latent = match cfg.fusion {
        Fusion::Sandwich => {
            let first: Vec<Var> = p_k.into_iter().chain(p_prev).collect();
            let x = concat(tape, &first)?;
            let o_ik = r.stack(tape, x, "stage1_fused", cfg.n1)?;
            let p_i = r.stack(tape, p_cur, "stage1_image", cfg.n1)?;
            let joint = tape.concat_rows(&[o_ik, p_i])?;
            r.stack(tape, joint, "stage2", cfg.n2)?
        }
        Fusion::Early => {
            let parts = [p_k, p_prev, Some(p_cur)].into_iter().flatten().collect::<Vec<_>>();
            let x = tape.concat_rows(&parts)?;
            r.stack(tape, x, "joint", cfg.n1 + cfg.n2)?
        }
        Fusion::Late => {
            let (Some(k), Some(prev)) = (p_k, p_prev) else {
                return Err(Error::Config("late fusion needs every input".into()));
            };
            let a = r.stack(tape, k, "stage1_imu", cfg.n1)?;
            let b = r.stack(tape, prev, "stage1_image_prev", cfg.n1)?;
            let c = r.stack(tape, p_cur, "stage1_image", cfg.n1)?;
            let x = tape.concat_rows(&[a, b, c])?;
            r.stack(tape, x, "stage2", cfg.n2)?
        }
    };
    let (pooled, prediction) = head(tape, latent, vars)?;
    Ok(ForwardOutput { prediction, pooled, stages: r.stages, attention: r.attention })
}
