use num_complex::Complex64;

use super::fft::{plan_for, Direction};
use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "circular convolution of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() || !a.len().is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "length {} is not a power of two",
            a.len()
        )));
    }
    Ok(())
}

fn spectral(a: &[f64], b: &[f64], conj_b: bool) -> Result<Vec<f64>> {
    check_pair(a, b)?;
    let plan = plan_for(a.len())?;
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.process(&mut fa, Direction::Forward)?;
    plan.process(&mut fb, Direction::Forward)?;
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= if conj_b { y.conj() } else { *y };
    }
    plan.process(&mut fa, Direction::Inverse)?;
    // Entries below the transform's round-off bound are indistinguishable
    // from zero; snapping them keeps exact zeros exact, which matters to
    // anything downstream with an unbounded slope at 0 (signed sqrt).
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let levels = a.len().trailing_zeros() as f64 + 1.0;
    let floor = 4.0 * levels * f64::EPSILON * norm(a) * norm(b);
    Ok(fa
        .into_iter()
        .map(|z| if z.re.abs() <= floor { 0.0 } else { z.re })
        .collect())
}

/// `out[k] = sum_j a[j] * b[(k - j) mod n]`, computed in the frequency domain.
pub fn circular_convolve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    spectral(a, b, false)
}

/// `out[j] = sum_k g[k] * b[(k - j) mod n]`: the adjoint of convolution by `b`.
pub fn circular_correlate(g: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    spectral(g, b, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structural_zeros_stay_exact() {
        // supports {0, 1} and {0, 1}: index 3 can never be reached
        let a = [0.37, -1.19, 0.0, 0.0];
        let b = [2.03, 0.71, 0.0, 0.0];
        let out = circular_convolve(&a, &b).unwrap();
        assert_eq!(out[3], 0.0);
    }

    #[test]
    fn delta_is_identity() {
        let a = [0.5, -1.0, 2.0, 3.0, 0.0, 1.0, 4.0, -2.0];
        let mut delta = [0.0; 8];
        delta[0] = 1.0;
        let out = circular_convolve(&a, &delta).unwrap();
        for (x, y) in out.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ones_pair() {
        let out = circular_convolve(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12 && (out[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            circular_convolve(&[1.0, 2.0], &[1.0, 2.0, 3.0, 4.0]),
            Err(Error::Shape(_))
        ));
        assert!(circular_convolve(&[1.0; 3], &[1.0; 3]).is_err());
    }

    #[test]
    fn correlate_is_adjoint() {
        // <conv(a, b), g> == <a, corr(g, b)>
        let a = [0.3, -1.2, 0.7, 2.0];
        let b = [1.5, 0.1, -0.4, 0.9];
        let g = [0.2, 0.8, -1.1, 0.5];
        let lhs: f64 = circular_convolve(&a, &b)
            .unwrap()
            .iter()
            .zip(&g)
            .map(|(x, y)| x * y)
            .sum();
        let rhs: f64 = circular_correlate(&g, &b)
            .unwrap()
            .iter()
            .zip(&a)
            .map(|(x, y)| x * y)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
