//! Formant frequencies and bandwidths by linear prediction.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use thiserror::Error;

use super::LldConfig;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormantError {
    #[error("frame has no energy")]
    Silent,
    #[error("root finding did not converge")]
    NoConvergence,
    #[error("only {0} resonances in range")]
    FewerThanThreeResonances(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Formants {
    pub frequencies: [f64; 3],
    pub bandwidths: [f64; 3],
}

/// Prediction polynomial `[1, a1, ..., ap]` from the autocorrelation of
/// `frame` (Levinson-Durbin). `None` for an all-zero frame.
pub fn lpc_coefficients(frame: &[f64], order: usize) -> Option<Vec<f64>> {
    let n = frame.len();
    let r: Vec<f64> = (0..=order)
        .map(|lag| {
            if lag >= n {
                0.0
            } else {
                frame[..n - lag].iter().zip(&frame[lag..]).map(|(a, b)| a * b).sum()
            }
        })
        .collect();
    if r[0] <= 1e-20 {
        return None;
    }
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    // white-noise correction keeps the recursion well conditioned
    let mut err = r[0] * (1.0 + 1e-9);
    let mut prev = a.clone();
    for i in 1..=order {
        let acc: f64 = (1..i).map(|j| prev[j] * r[i - j]).sum::<f64>() + r[i];
        let k = -acc / err;
        a[i] = k;
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        err *= 1.0 - k * k;
        if err <= 0.0 {
            break;
        }
        prev.copy_from_slice(&a);
    }
    Some(a)
}

/// Roots of `c[0] z^p + c[1] z^(p-1) + ... + c[p]` via the companion matrix.
pub fn polynomial_roots(coeffs: &[f64]) -> Option<Vec<Complex<f64>>> {
    let p = coeffs.len().checked_sub(1)?;
    if p == 0 || coeffs[0] == 0.0 {
        return None;
    }
    let mut m = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        m[(0, j)] = -coeffs[j + 1] / coeffs[0];
    }
    for i in 1..p {
        m[(i, i - 1)] = 1.0;
    }
    let schur = m.try_schur(1e-12, 10_000)?;
    Some(
        schur
            .complex_eigenvalues()
            .iter()
            .map(|c| Complex::new(c.re, c.im))
            .collect(),
    )
}

/// First three resonances of a (voiced) frame.
///
/// The frame is pre-emphasized, Hann-windowed and fitted with an
/// autocorrelation-method predictor; complex roots within the configured
/// frequency range and below the bandwidth limit are the formant candidates.
pub fn formants(
    frame: &[f64],
    rate: u32,
    order: usize,
    cfg: &LldConfig,
) -> Result<Formants, FormantError> {
    let n = frame.len();
    let rate = rate as f64;
    let shaped: Vec<f64> = (0..n)
        .map(|i| {
            let prev = if i > 0 { frame[i - 1] } else { 0.0 };
            let w = 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / n as f64).cos();
            (frame[i] - cfg.pre_emphasis * prev) * w
        })
        .collect();
    let a = lpc_coefficients(&shaped, order).ok_or(FormantError::Silent)?;
    let roots = polynomial_roots(&a).ok_or(FormantError::NoConvergence)?;
    let mut found: Vec<(f64, f64)> = roots
        .iter()
        .filter(|z| z.im > 0.0)
        .map(|z| {
            let freq = z.im.atan2(z.re) * rate / (2.0 * PI);
            let bw = -(rate / PI) * z.norm().ln();
            (freq, bw)
        })
        .filter(|&(f, bw)| {
            f >= cfg.formant_min_hz && f <= cfg.formant_max_hz && bw > 0.0 && bw < cfg.formant_max_bandwidth
        })
        .collect();
    if found.len() < 3 {
        return Err(FormantError::FewerThanThreeResonances(found.len()));
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Formants {
        frequencies: [found[0].0, found[1].0, found[2].0],
        bandwidths: [found[0].1, found[1].1, found[2].1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roots_of_known_polynomial() {
        // (z - 0.5)(z^2 + 0.81) = z^3 - 0.5 z^2 + 0.81 z - 0.405
        let mut roots = polynomial_roots(&[1.0, -0.5, 0.81, -0.405]).unwrap();
        roots.sort_by(|a, b| a.im.total_cmp(&b.im));
        assert!((roots[0] - Complex::new(0.0, -0.9)).norm() < 1e-9);
        assert!((roots[1] - Complex::new(0.5, 0.0)).norm() < 1e-9);
        assert!((roots[2] - Complex::new(0.0, 0.9)).norm() < 1e-9);
    }

    #[test]
    fn lpc_recovers_ar2_process() {
        // x[n] = 1.2 x[n-1] - 0.6 x[n-2] + e[n]
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = Normal::new(0.0, 1.0).unwrap();
        let mut x = vec![0.0; 20_000];
        for n in 2..x.len() {
            x[n] = 1.2 * x[n - 1] - 0.6 * x[n - 2] + d.sample(&mut rng);
        }
        let a = lpc_coefficients(&x, 2).unwrap();
        assert!((a[1] + 1.2).abs() < 0.02, "{a:?}");
        assert!((a[2] - 0.6).abs() < 0.02, "{a:?}");
        assert!(lpc_coefficients(&[0.0; 64], 4).is_none());
    }

    #[test]
    fn white_noise_frame_does_not_panic() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let d = Normal::new(0.0, 0.1).unwrap();
        let frame: Vec<f64> = (0..400).map(|_| d.sample(&mut rng)).collect();
        let cfg = LldConfig::default();
        match formants(&frame, 16_000, 18, &cfg) {
            Ok(f) => assert!(f.frequencies.iter().all(|v| v.is_finite())),
            Err(e) => assert!(matches!(e, FormantError::FewerThanThreeResonances(_))),
        }
    }
}
