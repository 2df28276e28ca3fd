//! Central finite-difference checks of tape gradients, in `f64`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates sampled per parameter tensor; smaller tensors are checked exhaustively.
    pub max_coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_tensor: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks the tape gradient of the scalar built by `f` against central differences.
///
/// `f` receives the tape and one trainable leaf per entry of `params`.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], config: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let build = |ps: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::with_finite_check(true);
        let vars = ps
            .iter()
            .map(|p| tape.param(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let value = |ps: &[Tensor<f64>]| -> Result<f64> {
        let (tape, _, out) = build(ps)?;
        scalar_of(tape.value(out))
    };
    let analytic = |ps: &[Tensor<f64>]| -> Result<Vec<Tensor<f64>>> {
        let (tape, vars, out) = build(ps)?;
        let grads = tape.backward(out)?;
        Ok(vars
            .iter()
            .zip(ps)
            .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
            .collect())
    };
    grad_check_with(value, analytic, params, config)
}

/// Same check with the value and the analytic gradient supplied separately.
pub fn grad_check_with<V, G>(
    value: V,
    analytic: G,
    params: &[Tensor<f64>],
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    V: Fn(&[Tensor<f64>]) -> Result<f64>,
    G: Fn(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>,
{
    let first = value(params)?;
    let second = value(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::Determinism { first, second });
    }
    let grads = analytic(params)?;
    if grads.len() != params.len() {
        return Err(TensorError::Contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for (ti, grad) in grads.iter().enumerate() {
        params[ti].check_same_shape(grad, "grad_check")?;
        let n = params[ti].numel();
        let coords: Vec<usize> = if n <= config.max_coords_per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, config.max_coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for c in coords {
            let orig = params[ti].data()[c];
            work[ti].data_mut()[c] = orig + config.eps;
            let plus = value(&work)?;
            work[ti].data_mut()[c] = orig - config.eps;
            let minus = value(&work)?;
            work[ti].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * config.eps);
            let err = relative_error(grad.data()[c], numeric);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((ti, c));
            }
        }
    }
    Ok(report)
}

fn scalar_of(t: &Tensor<f64>) -> Result<f64> {
    if t.numel() != 1 {
        return Err(TensorError::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_exact() {
        // f(x) = x^T A x with A symmetric positive definite
        let a = Tensor::from_rows(&[&[2.0, 0.5, 0.0], &[0.5, 1.0, 0.3], &[0.0, 0.3, 3.0]]).unwrap();
        let x = Tensor::new(vec![3, 1], vec![0.7, -1.2, 0.4]).unwrap();
        let report = grad_check(
            |tape, vars| {
                let a = tape.constant(a.clone())?;
                let ax = tape.matmul(a, vars[0])?;
                let xt = tape.transpose(vars[0])?;
                let q = tape.matmul(xt, ax)?;
                tape.sum(q)
            },
            &[x],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.coords_checked, 3);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let err = grad_check_with(
            |_| {
                calls.set(calls.get() + 1.0);
                Ok(calls.get())
            },
            |ps| Ok(ps.to_vec()),
            &[Tensor::scalar(1.0)],
            &GradCheckConfig::default(),
        );
        assert!(matches!(err, Err(TensorError::Determinism { .. })));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.01) - 0.01 / 2.01).abs() < 1e-15);
    }
}
