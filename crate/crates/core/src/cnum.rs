//! Complex helpers and the ε-regularized softmax over complex vectors.
//!
//! Over ℂ the ordinary softmax has poles wherever the sum of exponentials
//! vanishes (`softmax(0, iπ)` for instance). [`softmax_eps`] subtracts the
//! element of largest real part so that every exponential has modulus at
//! most one, and replaces `1/s` by [`reciprocal_eps`], which is bounded by
//! `1/(2√ε)` everywhere.

use num_complex::Complex64;

use crate::error::{DssError, Result};

pub type Complex = Complex64;

/// Regularizer used throughout unless a caller overrides it.
pub const DEFAULT_EPS: f64 = 1e-7;

/// `conj(x) / (x·conj(x) + eps)`.
pub fn reciprocal_eps(x: Complex, eps: f64) -> Complex {
    debug_assert!(eps > 0.0);
    x.conj() / (x.norm_sqr() + eps)
}

/// First index attaining the maximum real part, with its value.
pub fn cmax_by_real(x: &[Complex]) -> Result<(usize, Complex)> {
    let mut iter = x.iter().enumerate();
    let (mut best, first) = iter.next().ok_or(DssError::EmptyVector)?;
    let mut value = *first;
    for (i, v) in iter {
        if v.re > value.re {
            best = i;
            value = *v;
        }
    }
    Ok((best, value))
}

/// Stable complex softmax, see the module docs.
pub fn softmax_eps(x: &[Complex], eps: f64) -> Result<Vec<Complex>> {
    let (_, m) = cmax_by_real(x)?;
    let mut out: Vec<Complex> = x.iter().map(|v| (v - m).exp()).collect();
    let total: Complex = out.iter().sum();
    let scale = reciprocal_eps(total, eps);
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// `e^z − 1` without cancellation for small `|z|`.
pub fn expm1(z: Complex) -> Complex {
    let half_sin = (0.5 * z.im).sin();
    let re = z.re.exp_m1() * z.im.cos() - 2.0 * half_sin * half_sin;
    let im = z.re.exp() * z.im.sin();
    Complex::new(re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    #[test]
    fn reciprocal_of_zero_is_zero() {
        assert_eq!(reciprocal_eps(c(0.0, 0.0), 1e-7), c(0.0, 0.0));
    }

    #[test]
    fn reciprocal_of_one() {
        let r = reciprocal_eps(c(1.0, 0.0), 1e-7);
        assert_eq!(r, c(1.0 / (1.0 + 1e-7), 0.0));
    }

    #[test]
    fn cmax_ties_go_to_lowest_index() {
        let x = [c(1.0, 2.0), c(3.0, -1.0), c(3.0, 5.0)];
        assert_eq!(cmax_by_real(&x).unwrap(), (1, c(3.0, -1.0)));
        assert_eq!(cmax_by_real(&[c(-1.0, 0.0)]).unwrap(), (0, c(-1.0, 0.0)));
        let x = [c(0.0, 9.0), c(0.0, -9.0)];
        assert_eq!(cmax_by_real(&x).unwrap(), (0, c(0.0, 9.0)));
        assert_eq!(cmax_by_real(&[]), Err(DssError::EmptyVector));
    }

    #[test]
    fn softmax_of_equal_entries() {
        let s = softmax_eps(&[c(0.0, 0.0), c(0.0, 0.0)], 1e-7).unwrap();
        for v in s {
            assert!((v - c(0.5, 0.0)).norm() < 1e-7);
        }
    }

    #[test]
    fn softmax_at_pole_returns_zeros() {
        let s = softmax_eps(&[c(0.0, 0.0), c(0.0, PI)], 1e-7).unwrap();
        for v in s {
            assert!(v.re.is_finite() && v.im.is_finite());
            // e^{iπ} leaves a 1e-16 residual in the sum, scaled by 1/ε.
            assert!(v.norm() < 1e-8, "{v}");
        }
    }

    #[test]
    fn expm1_small_argument() {
        let z = c(1e-12, -3e-12);
        let e = expm1(z);
        assert!((e - z).norm() < 1e-23);
        let z = c(0.7, -2.1);
        assert!((expm1(z) - (z.exp() - 1.0)).norm() < 1e-15);
    }

    fn real_softmax(x: &[f64]) -> Vec<f64> {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn reciprocal_is_bounded(re in -1e3f64..1e3, im in -1e3f64..1e3, scale in -8i32..8) {
            let x = c(re * 10f64.powi(scale), im * 10f64.powi(scale));
            prop_assert!(reciprocal_eps(x, 1e-7).norm() <= 1581.14);
        }

        #[test]
        fn matches_real_softmax(x in proptest::collection::vec(-30.0f64..30.0, 1..64)) {
            let cx: Vec<Complex> = x.iter().map(|&v| c(v, 0.0)).collect();
            let got = softmax_eps(&cx, 1e-7).unwrap();
            for (g, want) in got.iter().zip(real_softmax(&x)) {
                prop_assert!((g.re - want).abs() < 1e-7);
                prop_assert!(g.im.abs() < 1e-15);
            }
        }

        #[test]
        fn bounded_and_shift_invariant(
            parts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..40),
            shift in -20.0f64..20.0,
        ) {
            let x: Vec<Complex> = parts.iter().map(|&(a, b)| c(a, b)).collect();
            let bound = 1.0 / (2.0 * 1e-7f64.sqrt());
            let s = softmax_eps(&x, 1e-7).unwrap();
            for v in &s {
                prop_assert!(v.norm() <= bound);
            }
            let shifted: Vec<Complex> = x.iter().map(|v| v - shift).collect();
            prop_assert_eq!(cmax_by_real(&x).unwrap().0, cmax_by_real(&shifted).unwrap().0);
            let s2 = softmax_eps(&shifted, 1e-7).unwrap();
            for (a, b) in s.iter().zip(&s2) {
                prop_assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
            }
            let (_, m) = cmax_by_real(&x).unwrap();
            let total: Complex = x.iter().map(|v| (v - m).exp()).sum();
            if total.norm() >= 1.0 {
                let sum: Complex = s.iter().sum();
                prop_assert!((sum - 1.0).norm() <= 2e-7 + 1e-12);
            }
        }
    }
}
