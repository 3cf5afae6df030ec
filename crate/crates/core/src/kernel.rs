//! Diagonal state space kernels.
//!
//! For a diagonal system with eigenvalues `λ_i`, sample time `Δ` and
//! `P_{i,k} = λ_i·k·Δ` there are two closed forms of the length-`L` kernel:
//!
//! * `K = w̃ · Λ⁻¹(e^{ΛΔ} − I) · exp(P)` (the `exp` variants, `Re λ < 0`);
//! * `K = w · Λ⁻¹ · row-softmax(P)` with `w_i = w̃_i(e^{Lλ_iΔ} − 1)`
//!   (the `softmax` variant, any sign of `Re λ`).
//!
//! Both take the real part of the complex sum over `i`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cnum::{expm1, softmax_eps, Complex, DEFAULT_EPS};
use crate::error::{DssError, Result};

/// Kernel parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Exp,
    Softmax,
    ExpNoScale,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Exp => "exp",
            Variant::Softmax => "softmax",
            Variant::ExpNoScale => "exp_no_scale",
        }
    }

    /// Whether `lambda_re` stores `log(−Re λ)` rather than `Re λ`.
    pub fn uses_log_real_part(self) -> bool {
        matches!(self, Variant::Exp | Variant::ExpNoScale)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = DssError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" => Ok(Variant::Exp),
            "softmax" => Ok(Variant::Softmax),
            "exp_no_scale" | "exp-no-scale" => Ok(Variant::ExpNoScale),
            other => Err(DssError::InvalidArgument(format!("unknown variant '{other}'"))),
        }
    }
}

/// Parameters of a single kernel. `w` holds `w̃` for the exp variants and
/// `w` for softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub variant: Variant,
    pub lambda_re: Vec<f64>,
    pub lambda_im: Vec<f64>,
    pub w: Vec<Complex>,
    pub delta_log: f64,
}

impl KernelParams {
    pub fn new(
        variant: Variant,
        lambda_re: Vec<f64>,
        lambda_im: Vec<f64>,
        w: Vec<Complex>,
        delta_log: f64,
    ) -> Result<Self> {
        let n = lambda_re.len();
        if n == 0 {
            return Err(DssError::InvalidArgument("state size must be positive".into()));
        }
        if lambda_im.len() != n || w.len() != n {
            return Err(DssError::ShapeMismatch(format!(
                "lambda_re has {n} entries, lambda_im {}, w {}",
                lambda_im.len(),
                w.len()
            )));
        }
        let finite = lambda_re.iter().chain(&lambda_im).all(|v| v.is_finite())
            && w.iter().all(|v| v.re.is_finite() && v.im.is_finite())
            && delta_log.is_finite();
        if !finite {
            return Err(DssError::InvalidArgument("kernel parameters must be finite".into()));
        }
        Ok(Self { variant, lambda_re, lambda_im, w, delta_log })
    }

    /// Builds parameters whose effective eigenvalues are `lambda`. The exp
    /// variants need `Re λ < 0`.
    pub fn from_lambda(variant: Variant, lambda: &[Complex], w: Vec<Complex>, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(DssError::InvalidArgument("delta must be positive".into()));
        }
        let lambda_re = lambda
            .iter()
            .map(|l| {
                if !variant.uses_log_real_part() {
                    Ok(l.re)
                } else if l.re < 0.0 {
                    Ok((-l.re).ln())
                } else {
                    Err(DssError::InvalidArgument(format!(
                        "{variant} variant needs Re(lambda) < 0, got {}",
                        l.re
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let lambda_im = lambda.iter().map(|l| l.im).collect();
        Self::new(variant, lambda_re, lambda_im, w, delta.ln())
    }

    pub fn n(&self) -> usize {
        self.lambda_re.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta_log.exp()
    }

    /// Flat real vector `[lambda_re, lambda_im, w_re, w_im, delta_log]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * self.n() + 1);
        v.extend(&self.lambda_re);
        v.extend(&self.lambda_im);
        v.extend(self.w.iter().map(|c| c.re));
        v.extend(self.w.iter().map(|c| c.im));
        v.push(self.delta_log);
        v
    }

    /// Inverse of [`to_flat`](Self::to_flat) for the same variant and `N`.
    pub fn with_flat(&self, theta: &[f64]) -> Result<Self> {
        let n = self.n();
        if theta.len() != 4 * n + 1 {
            return Err(DssError::LengthMismatch(theta.len(), 4 * n + 1));
        }
        let w = (0..n).map(|i| Complex::new(theta[2 * n + i], theta[3 * n + i])).collect();
        Self::new(self.variant, theta[..n].to_vec(), theta[n..2 * n].to_vec(), w, theta[4 * n])
    }
}

/// A real kernel `K̄` of length `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub values: Vec<f64>,
}

impl Kernel {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl From<Vec<f64>> for Kernel {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Eigenvalues as used by the kernel: `−e^{re} + i·im` for the exp
/// variants, `re + i·im` for softmax.
pub fn effective_lambda(p: &KernelParams) -> Vec<Complex> {
    p.lambda_re
        .iter()
        .zip(&p.lambda_im)
        .map(|(&re, &im)| {
            if p.variant.uses_log_real_part() {
                Complex::new(-re.exp(), im)
            } else {
                Complex::new(re, im)
            }
        })
        .collect()
}

fn check_variant(p: &KernelParams, want: Variant) -> Result<()> {
    if p.variant != want {
        return Err(DssError::InvalidArgument(format!("expected {want} parameters, got {}", p.variant)));
    }
    Ok(())
}

fn check_len(l: usize) -> Result<()> {
    if l == 0 {
        return Err(DssError::InvalidArgument("kernel length must be positive".into()));
    }
    Ok(())
}

fn nonsingular(lambda: &[Complex]) -> Result<()> {
    if lambda.iter().any(|l| l.re == 0.0 && l.im == 0.0) {
        return Err(DssError::SingularLambda);
    }
    Ok(())
}

/// `K_k = Re Σ_i c_i e^{λ_i k Δ}`.
fn sum_of_exponentials(lambda: &[Complex], coef: &[Complex], delta: f64, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; l];
    for (lam, c) in lambda.iter().zip(coef) {
        let step = lam * delta;
        for (k, slot) in out.iter_mut().enumerate() {
            *slot += (c * (step * k as f64).exp()).re;
        }
    }
    out
}

/// Kernel of the exp variant.
pub fn dss_exp_kernel(p: &KernelParams, l: usize) -> Result<Kernel> {
    check_variant(p, Variant::Exp)?;
    check_len(l)?;
    let lambda = effective_lambda(p);
    nonsingular(&lambda)?;
    let delta = p.delta();
    let coef: Vec<Complex> =
        lambda.iter().zip(&p.w).map(|(lam, w)| w * expm1(lam * delta) / lam).collect();
    Ok(sum_of_exponentials(&lambda, &coef, delta, l).into())
}

/// Kernel of the exp variant without the `Λ⁻¹(e^{ΛΔ} − I)` factor.
pub fn dss_exp_noscale_kernel(p: &KernelParams, l: usize) -> Result<Kernel> {
    check_variant(p, Variant::ExpNoScale)?;
    check_len(l)?;
    let lambda = effective_lambda(p);
    Ok(sum_of_exponentials(&lambda, &p.w, p.delta(), l).into())
}

/// Kernel of the softmax variant with the default regularizer.
pub fn dss_softmax_kernel(p: &KernelParams, l: usize) -> Result<Kernel> {
    dss_softmax_kernel_eps(p, l, DEFAULT_EPS)
}

/// Kernel of the softmax variant: each row of `P` goes through
/// [`softmax_eps`], so every exponent has non-positive real part.
pub fn dss_softmax_kernel_eps(p: &KernelParams, l: usize, eps: f64) -> Result<Kernel> {
    check_variant(p, Variant::Softmax)?;
    check_len(l)?;
    let lambda = effective_lambda(p);
    nonsingular(&lambda)?;
    let delta = p.delta();
    let mut out = vec![0.0; l];
    let mut row = vec![Complex::new(0.0, 0.0); l];
    for (lam, w) in lambda.iter().zip(&p.w) {
        let step = lam * delta;
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = step * k as f64;
        }
        let s = softmax_eps(&row, eps)?;
        let coef = w / lam;
        for (acc, sk) in out.iter_mut().zip(&s) {
            *acc += (coef * sk).re;
        }
    }
    Ok(out.into())
}

/// Dispatches on the variant.
pub fn compute_kernel(p: &KernelParams, l: usize) -> Result<Kernel> {
    match p.variant {
        Variant::Exp => dss_exp_kernel(p, l),
        Variant::Softmax => dss_softmax_kernel(p, l),
        Variant::ExpNoScale => dss_exp_noscale_kernel(p, l),
    }
}

/// Largest `Re(λ)·Δ·L` for which `e^{LλΔ}` is formed.
const WEIGHT_EXPONENT_LIMIT: f64 = 700.0;
const SINGULAR_WEIGHT_FLOOR: f64 = 1e-12;

/// Converts a diagonalized system into kernel weights: `w̃ = (CV)ᵀ ∗ (V⁻¹B)`
/// and `w_i = w̃_i(e^{Lλ_iΔ} − 1)`.
pub fn prop1_weights(
    cv: &[Complex],
    vinvb: &[Complex],
    lambda: &[Complex],
    delta: f64,
    l: usize,
) -> Result<(Vec<Complex>, Vec<Complex>)> {
    let n = lambda.len();
    if cv.len() != n || vinvb.len() != n {
        return Err(DssError::ShapeMismatch(format!(
            "cv has {}, vinvb {}, lambda {n} entries",
            cv.len(),
            vinvb.len()
        )));
    }
    let w_tilde: Vec<Complex> = cv.iter().zip(vinvb).map(|(a, b)| a * b).collect();
    let mut w = Vec::with_capacity(n);
    for (wt, lam) in w_tilde.iter().zip(lambda) {
        let exponent = lam * (delta * l as f64);
        if exponent.re > WEIGHT_EXPONENT_LIMIT {
            return Err(DssError::WeightOverflow);
        }
        let factor = expm1(exponent);
        if factor.norm() <= SINGULAR_WEIGHT_FLOOR {
            return Err(DssError::SoftmaxWeightUndefined);
        }
        w.push(wt * factor);
    }
    Ok((w_tilde, w))
}

/// Zeroes positions `c..` and keeps the length.
pub fn truncate_kernel(k: &Kernel, c: usize) -> Kernel {
    let values = k
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < c { v } else { 0.0 })
        .collect();
    Kernel { values }
}

/// Gradient of `Σ_k upstream_k·K_k` with respect to exp-variant parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrad {
    pub d_lambda_re: Vec<f64>,
    pub d_lambda_im: Vec<f64>,
    pub d_w_re: Vec<f64>,
    pub d_w_im: Vec<f64>,
    pub d_delta_log: f64,
}

impl KernelGrad {
    /// Same layout as [`KernelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * self.d_w_re.len() + 1);
        v.extend(&self.d_lambda_re);
        v.extend(&self.d_lambda_im);
        v.extend(&self.d_w_re);
        v.extend(&self.d_w_im);
        v.push(self.d_delta_log);
        v
    }
}

/// Analytic gradient for the exp variant.
///
/// With `g_k(λ, Δ) = (e^{λΔ(k+1)} − e^{λΔk})/λ` the kernel is
/// `K_k = Re Σ_i w̃_i g_k(λ_i, Δ)` and
///
/// * `∂g_k/∂λ = Δ((k+1)e^{λΔ(k+1)} − k e^{λΔk})/λ − g_k/λ`
/// * `∂g_k/∂Δ = (k+1)e^{λΔ(k+1)} − k e^{λΔk}`
///
/// Holomorphy in `λ` gives `∂/∂Re = Re(h')`, `∂/∂Im = −Im(h')`; the raw
/// parameters then enter through `λ = −e^{a} + i·b` and `Δ = e^{δ}`.
pub fn kernel_grad_exp(p: &KernelParams, l: usize, upstream: &[f64]) -> Result<KernelGrad> {
    check_variant(p, Variant::Exp)?;
    if upstream.len() != l {
        return Err(DssError::LengthMismatch(upstream.len(), l));
    }
    let lambda = effective_lambda(p);
    nonsingular(&lambda)?;
    let delta = p.delta();
    let n = p.n();
    let mut grad = KernelGrad {
        d_lambda_re: vec![0.0; n],
        d_lambda_im: vec![0.0; n],
        d_w_re: vec![0.0; n],
        d_w_im: vec![0.0; n],
        d_delta_log: 0.0,
    };
    let mut d_delta = Complex::new(0.0, 0.0);
    for i in 0..n {
        let lam = lambda[i];
        let step = lam * delta;
        let scale = expm1(step) / lam;
        // Σ_k up_k g_k, Σ_k up_k ∂g_k/∂λ·λ, Σ_k up_k ∂g_k/∂Δ
        let mut g_sum = Complex::new(0.0, 0.0);
        let mut dl_sum = Complex::new(0.0, 0.0);
        let mut dd_sum = Complex::new(0.0, 0.0);
        for (k, &up) in upstream.iter().enumerate() {
            if up == 0.0 {
                continue;
            }
            let kf = k as f64;
            let e_k = (step * kf).exp();
            let e_k1 = (step * (kf + 1.0)).exp();
            let g = scale * e_k;
            let dd = e_k1 * (kf + 1.0) - e_k * kf;
            g_sum += g * up;
            dd_sum += dd * up;
            dl_sum += (dd * delta - g) * up;
        }
        let w = p.w[i];
        grad.d_w_re[i] = g_sum.re;
        grad.d_w_im[i] = -g_sum.im;
        let h = w * dl_sum / lam;
        grad.d_lambda_re[i] = (h * lam.re).re;
        grad.d_lambda_im[i] = -h.im;
        d_delta += w * dd_sum;
    }
    grad.d_delta_log = d_delta.re * delta;
    Ok(grad)
}

/// Central differences `(f(θ + h·e_j) − f(θ − h·e_j)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            probe[j] = theta[j] + h;
            let up = f(&probe);
            probe[j] = theta[j] - h;
            let down = f(&probe);
            probe[j] = theta[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn effective_lambda_per_variant() {
        let p = KernelParams::new(Variant::Exp, vec![0.0], vec![0.0], vec![c(1.0, 0.0)], 0.0).unwrap();
        assert_eq!(effective_lambda(&p), vec![c(-1.0, 0.0)]);
        let p = KernelParams::new(Variant::Softmax, vec![0.3], vec![-2.0], vec![c(1.0, 0.0)], 0.0).unwrap();
        assert_eq!(effective_lambda(&p), vec![c(0.3, -2.0)]);
        let p = KernelParams::new(Variant::Exp, vec![-40.0, 3.0, 700.0], vec![1.0; 3], vec![c(1.0, 0.0); 3], 0.0)
            .unwrap();
        assert!(effective_lambda(&p).iter().all(|l| l.re < 0.0));
    }

    #[test]
    fn exp_kernel_halving() {
        let p = KernelParams::new(Variant::Exp, vec![0.0], vec![0.0], vec![c(1.0, 0.0)], LN_2.ln()).unwrap();
        close(&dss_exp_kernel(&p, 4).unwrap().values, &[0.5, 0.25, 0.125, 0.0625], 1e-15);
    }

    #[test]
    fn zero_weights_give_zero_kernel() {
        let p = KernelParams::new(Variant::Exp, vec![0.1, -0.4], vec![2.0, -1.0], vec![c(0.0, 0.0); 2], -2.0)
            .unwrap();
        assert!(dss_exp_kernel(&p, 16).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_kernel_two_taps() {
        let p = KernelParams::new(Variant::Softmax, vec![-1.0], vec![0.0], vec![c(-1.0, 0.0)], 0.0).unwrap();
        // w/λ = 1, softmax(0, −1) = (e/(1+e), 1/(1+e))
        let e = 1f64.exp();
        close(&dss_softmax_kernel(&p, 2).unwrap().values, &[e / (1.0 + e), 1.0 / (1.0 + e)], 1e-7);
        close(&dss_softmax_kernel(&p, 2).unwrap().values, &[0.7310586, 0.2689414], 1e-7);
    }

    #[test]
    fn softmax_kernel_stays_finite_for_growing_modes() {
        let p = KernelParams::new(Variant::Softmax, vec![5.0], vec![1.3], vec![c(0.7, -0.2)], 0.0).unwrap();
        let k = dss_softmax_kernel(&p, 1024).unwrap();
        let bound = (c(0.7, -0.2) / c(5.0, 1.3)).norm() * 1.0001;
        assert!(k.values.iter().all(|v| v.is_finite() && v.abs() <= bound));
    }

    #[test]
    fn singular_lambda_rejected() {
        let p = KernelParams::new(Variant::Softmax, vec![0.0], vec![0.0], vec![c(1.0, 0.0)], 0.0).unwrap();
        assert_eq!(dss_softmax_kernel(&p, 4), Err(DssError::SingularLambda));
    }

    #[test]
    fn noscale_kernel() {
        let p = KernelParams::new(Variant::ExpNoScale, vec![0.0], vec![0.0], vec![c(1.0, 0.0)], LN_2.ln())
            .unwrap();
        close(&dss_exp_noscale_kernel(&p, 3).unwrap().values, &[1.0, 0.5, 0.25], 1e-15);
        let w = vec![c(0.3, 1.0), c(-2.0, 0.5), c(0.25, 0.0)];
        let p = KernelParams::new(Variant::ExpNoScale, vec![0.2, -1.0, 1.5], vec![3.0, 0.0, -7.0], w.clone(), -3.0)
            .unwrap();
        let k0 = dss_exp_noscale_kernel(&p, 5).unwrap().values[0];
        assert!((k0 - w.iter().map(|v| v.re).sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn noscale_and_exp_differ_by_scale_for_single_mode() {
        let lam = c(-0.7, 2.0);
        let delta = 0.3f64;
        let wt = c(0.4, -1.1);
        let scale = expm1(lam * delta) / lam;
        // A single mode: K_exp = Re(w̃·scale·e^{λkΔ}) equals the no-scale kernel with weight w̃·scale.
        let exp = KernelParams::from_lambda(Variant::Exp, &[lam], vec![wt], delta).unwrap();
        let noscale = KernelParams::from_lambda(Variant::ExpNoScale, &[lam], vec![wt * scale], delta).unwrap();
        close(
            &dss_exp_kernel(&exp, 20).unwrap().values,
            &dss_exp_noscale_kernel(&noscale, 20).unwrap().values,
            1e-14,
        );
    }

    #[test]
    fn weight_conversion() {
        let (wt, w) = prop1_weights(&[c(1.0, 0.0)], &[c(1.0, 0.0)], &[c(-1.0, 0.0)], 1.0, 2).unwrap();
        assert_eq!(wt, vec![c(1.0, 0.0)]);
        assert!((w[0] - c((-2f64).exp() - 1.0, 0.0)).norm() < 1e-15);
        assert!((w[0].re + 0.8646647).abs() < 1e-7);
        let (wt, w) =
            prop1_weights(&[c(0.0, 0.0); 2], &[c(1.0, 2.0); 2], &[c(-1.0, 1.0), c(-0.5, 0.0)], 0.1, 8).unwrap();
        assert!(wt.iter().chain(&w).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn weight_conversion_guards() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let r = prop1_weights(&[c(1.0, 0.0)], &[c(1.0, 0.0)], &[c(0.0, two_pi)], 1.0, 1);
        assert_eq!(r, Err(DssError::SoftmaxWeightUndefined));
        let r = prop1_weights(&[c(1.0, 0.0)], &[c(1.0, 0.0)], &[c(10.0, 0.0)], 1.0, 100);
        assert_eq!(r, Err(DssError::WeightOverflow));
    }

    #[test]
    fn truncation() {
        let k = Kernel::from(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(truncate_kernel(&k, 2).values, vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(truncate_kernel(&k, 4), k);
        assert_eq!(truncate_kernel(&k, 9), k);
    }

    #[test]
    fn gradient_of_first_tap() {
        let p = KernelParams::new(Variant::Exp, vec![0.0], vec![0.0], vec![c(1.0, 0.0)], LN_2.ln()).unwrap();
        let g = kernel_grad_exp(&p, 1, &[1.0]).unwrap();
        assert!((g.d_w_re[0] - 0.5).abs() < 1e-15);
        let g = kernel_grad_exp(&p, 3, &[0.0; 3]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_differences_basic() {
        let g = finite_diff_grad(|t| t[0] * t[0], &[3.0], 1e-6);
        assert!((g[0] - 6.0).abs() < 1e-6);
        assert_eq!(finite_diff_grad(|_| 4.2, &[1.0, -2.0], 1e-6), vec![0.0, 0.0]);
    }

    #[test]
    fn flat_round_trip() {
        let p = KernelParams::new(Variant::Exp, vec![0.1, 0.2], vec![3.0, 4.0], vec![c(5.0, 6.0), c(7.0, 8.0)], 9.0)
            .unwrap();
        assert_eq!(p.to_flat(), vec![0.1, 0.2, 3.0, 4.0, 5.0, 7.0, 6.0, 8.0, 9.0]);
        assert_eq!(p.with_flat(&p.to_flat()).unwrap(), p);
    }

    #[test]
    fn variant_names() {
        for v in [Variant::Exp, Variant::Softmax, Variant::ExpNoScale] {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }
}
