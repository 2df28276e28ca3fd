use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::stream::ImuStream;

/// Second-order section with `a0` normalized to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    /// Complex frequency response at `f_hz` for sample rate `fs_hz`.
    pub fn response(&self, f_hz: f64, fs_hz: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f_hz / fs_hz);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    pub fn magnitude(&self, f_hz: f64, fs_hz: f64) -> f64 {
        self.response(f_hz, fs_hz).norm()
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }
}

/// Second-order Butterworth low-pass via the bilinear transform with the
/// cutoff prewarped so that `|H(fc)| = 1/sqrt(2)`.
pub fn design_butterworth2(fc_hz: f64, fs_hz: f64) -> Result<BiquadCoeffs> {
    let nyquist_hz = fs_hz / 2.0;
    if !(fc_hz > 0.0) || !(fs_hz > 0.0) {
        return Err(Error::Contract(format!("invalid cutoff {fc_hz} Hz / rate {fs_hz} Hz")));
    }
    if fc_hz >= nyquist_hz {
        return Err(Error::Nyquist { fc_hz, nyquist_hz });
    }
    let k = (PI * fc_hz / fs_hz).tan();
    let k2 = k * k;
    let norm = 1.0 / (1.0 + SQRT_2 * k + k2);
    let b0 = k2 * norm;
    Ok(BiquadCoeffs {
        b0,
        b1: 2.0 * b0,
        b2: b0,
        a1: 2.0 * (k2 - 1.0) * norm,
        a2: (1.0 - SQRT_2 * k + k2) * norm,
    })
}

/// Causal direct-form-II-transposed filtering from a zero state.
pub fn filter_apply(c: &BiquadCoeffs, series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Contract("cannot filter an empty series".into()));
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    Ok(series
        .iter()
        .map(|&x| {
            let y = c.b0 * x + s1;
            s1 = c.b1 * x - c.a1 * y + s2;
            s2 = c.b2 * x - c.a2 * y;
            y
        })
        .collect())
}

/// Filters every channel of `stream` independently.
pub fn filter_stream(c: &BiquadCoeffs, stream: &ImuStream) -> Result<ImuStream> {
    let channels = stream
        .channels
        .iter()
        .map(|ch| filter_apply(c, ch))
        .collect::<Result<Vec<_>>>()?;
    ImuStream::new(stream.timestamps.clone(), channels, stream.side)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unity_dc_gain_and_half_power_cutoff() {
        let c = design_butterworth2(30.0, 100.0).unwrap();
        assert!((c.magnitude(0.0, 100.0) - 1.0).abs() < 1e-9);
        assert!((c.magnitude(30.0, 100.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!(c.magnitude(45.0, 100.0) < 0.4);
        assert!(c.is_stable());
    }

    #[test]
    fn nyquist_violation() {
        assert!(matches!(design_butterworth2(50.0, 100.0), Err(Error::Nyquist { .. })));
        assert!(matches!(design_butterworth2(60.0, 100.0), Err(Error::Nyquist { .. })));
    }

    #[test]
    fn constant_passes_through() {
        let c = design_butterworth2(30.0, 100.0).unwrap();
        let y = filter_apply(&c, &[2.5; 500]).unwrap();
        assert!((y[499] - 2.5).abs() < 1e-6);
        assert!(filter_apply(&c, &[]).is_err());
    }

    #[test]
    fn impulse_response_decays() {
        let c = design_butterworth2(30.0, 100.0).unwrap();
        let mut imp = vec![0.0; 400];
        imp[0] = 1.0;
        let h = filter_apply(&c, &imp).unwrap();
        assert!(h[200..].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn attenuates_45hz_tone() {
        let c = design_butterworth2(30.0, 100.0).unwrap();
        let x: Vec<f64> = (0..1000)
            .map(|n| (2.0 * PI * 45.0 * n as f64 / 100.0).sin())
            .collect();
        let y = filter_apply(&c, &x).unwrap();
        let amp = y[500..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(amp < 0.4, "{amp}");
        assert!((amp - c.magnitude(45.0, 100.0)).abs() < 0.01);
    }
}
