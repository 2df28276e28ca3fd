use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sftik_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::ParamVars;

pub struct BlockOutput {
    pub out: Var,
    /// One `tokens x tokens` row-stochastic matrix per head.
    pub attention: Vec<Var>,
}

fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, vars: &ParamVars, w: &str, b: &str) -> Result<Var> {
    let y = tape.matmul(x, vars.get(w)?)?;
    Ok(tape.add_row(y, vars.get(b)?)?)
}

pub(crate) fn dropout<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p == 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    let shape = tape.value(x).shape().to_vec();
    let mask = Tensor::from_fn(shape, |_| if rng.random::<f64>() < p { T::zero() } else { keep });
    let m = tape.constant(mask)?;
    Ok(tape.mul(x, m)?)
}

/// Pre-norm residual block: `x + MHSA(LN(x))`, then `+ MLP(LN(.))`.
pub fn transformer_block<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &ParamVars,
    prefix: &str,
    cfg: &ModelConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<BlockOutput> {
    let d = cfg.d_emb;
    if cfg.heads == 0 || d % cfg.heads != 0 {
        return Err(Error::Config(format!("d_emb {d} not divisible by {} heads", cfg.heads)));
    }
    let (_, width) = tape.try_value(x)?.dims2()?;
    if width != d {
        return Err(Error::Dimension(format!("{prefix}: token width {width}, expected {d}")));
    }
    let p = |s: &str| format!("{prefix}.{s}");

    let h = tape.layer_norm(x, vars.get(&p("ln1.gamma"))?, vars.get(&p("ln1.beta"))?, cfg.ln_eps)?;
    let q = linear(tape, h, vars, &p("attn.wq"), &p("attn.bq"))?;
    let k = tape.matmul(h, vars.get(&p("attn.wk"))?)?;
    let v = linear(tape, h, vars, &p("attn.wv"), &p("attn.bv"))?;
    let dh = cfg.head_dim();
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut attention = Vec::with_capacity(cfg.heads);
    for i in 0..cfg.heads {
        let qh = tape.slice_cols(q, i * dh, dh)?;
        let kh = tape.slice_cols(k, i * dh, dh)?;
        let vh = tape.slice_cols(v, i * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let s = tape.matmul(qh, kt)?;
        let s = tape.scale(s, scale)?;
        let a = tape.softmax_rows(s)?;
        attention.push(a);
        heads.push(tape.matmul(a, vh)?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let o = linear(tape, cat, vars, &p("attn.wo"), &p("attn.bo"))?;
    let o = dropout(tape, o, cfg.dropout, rng.as_deref_mut())?;
    let x = tape.add(x, o)?;

    let h = tape.layer_norm(x, vars.get(&p("ln2.gamma"))?, vars.get(&p("ln2.beta"))?, cfg.ln_eps)?;
    let h = linear(tape, h, vars, &p("mlp.fc1.weight"), &p("mlp.fc1.bias"))?;
    let h = tape.gelu(h)?;
    let h = linear(tape, h, vars, &p("mlp.fc2.weight"), &p("mlp.fc2.bias"))?;
    let h = dropout(tape, h, cfg.dropout, rng)?;
    let out = tape.add(x, h)?;
    Ok(BlockOutput { out, attention })
}
