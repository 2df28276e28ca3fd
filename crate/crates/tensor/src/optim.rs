use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Self {
        let zeros = |p: &Tensor<T>| Tensor::zeros(p.shape().to_vec());
        Self {
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            config,
        }
    }
}

/// One bias-corrected Adam update.
///
/// A parameter whose gradient is identically zero is treated as having no
/// gradient this step: neither it nor its moments change. The step counter
/// always advances.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::Dimension {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.m.len()],
        });
    }
    for ((p, g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        p.check_same_shape(g, "adam_step")?;
        p.check_same_shape(m, "adam_step")?;
        p.check_same_shape(v, "adam_step")?;
    }

    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
    let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - beta1), T::from_f64_lossy(1.0 - beta2));
    let step_size = T::from_f64_lossy(lr / bc1);
    let inv_sqrt_bc2 = T::from_f64_lossy(1.0 / bc2.sqrt());
    let eps = T::from_f64_lossy(eps);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if g.data().iter().all(|x| x.is_zero()) {
            continue;
        }
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            *pi = *pi - step_size * *mi / (vi.sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}
