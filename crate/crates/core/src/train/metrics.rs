use sftik_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Per-element mean squared error on the tape.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    let shape = tape.try_value(pred)?.shape();
    if shape != target.shape() {
        return Err(Error::Dimension(format!(
            "prediction shape {shape:?} does not match target {:?}",
            target.shape()
        )));
    }
    Ok(tape.mse(pred, target)?)
}

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!("series lengths {} and {}", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Contract("empty series".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sse / pred.len() as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    Ok(mse(pred, target)?.sqrt())
}

/// Pearson correlation; `None` when either series has zero variance.
pub fn pcc(pred: &[f64], target: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, target)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Mean and population standard deviation; `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), (12.5f64).sqrt());
        assert_eq!(mse(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 4.0);
        let t = [1.0, 2.0, 4.0, 3.0];
        assert!((pcc(&t, &t).unwrap().unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = t.iter().map(|v| 7.0 - v).collect();
        assert!((pcc(&neg, &t).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pcc(&[2.0; 4], &t).unwrap(), None);
        assert!(rmse(&[], &[]).is_err());
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn loss_on_tape() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::full(vec![2, 3], 3.0)).unwrap();
        let l = mse_loss(&mut tape, p, &Tensor::full(vec![2, 3], 1.0)).unwrap();
        assert_eq!(tape.value(l).data()[0], 4.0);
        assert!(mse_loss(&mut tape, p, &Tensor::zeros(vec![3, 2])).is_err());
    }
}
