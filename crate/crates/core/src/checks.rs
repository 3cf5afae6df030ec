//! Seeded cross-oracle suites: each trial builds a random instance, runs two
//! independent routes and reports the largest disagreement.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::cnum::{softmax_eps, Complex};
use crate::error::{DssError, Result};
use crate::kernel::{
    dss_exp_kernel, dss_softmax_kernel, dss_softmax_kernel_eps, finite_diff_grad, kernel_grad_exp,
    prop1_weights, KernelParams, Variant,
};
use crate::recurrence::{run_exp, run_softmax_stable};
use crate::rng::SplitMix64;
use crate::signal::{causal_conv_fft, softmax_via_fft};
use crate::ssm::{general_ssm_kernel, CMatrix, GeneralSSM};

/// Regularizer used when an ε-softmax is compared against an exact identity.
/// The default `1e-7` perturbs `1/s` by a relative `ε/|s|²`, which is larger
/// than the identity tolerances.
pub const VERIFY_EPS: f64 = 1e-30;

pub const PROP1_TOL: f64 = 1e-8;
pub const RECURRENCE_TOL: f64 = 1e-8;
pub const FFT_SOFTMAX_TOL: f64 = 1e-8;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_FD_STEP: f64 = 1e-6;
pub const MAX_CONDITION: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Prop1,
    Recurrence,
    FftSoftmax,
    Grad,
    All,
}

impl Suite {
    pub fn members(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Prop1, Suite::Recurrence, Suite::FftSoftmax, Suite::Grad],
            s => vec![s],
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Prop1 => "prop1",
            Suite::Recurrence => "recurrence",
            Suite::FftSoftmax => "fftsoftmax",
            Suite::Grad => "grad",
            Suite::All => "all",
        })
    }
}

impl FromStr for Suite {
    type Err = DssError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prop1" => Ok(Suite::Prop1),
            "recurrence" => Ok(Suite::Recurrence),
            "fftsoftmax" => Ok(Suite::FftSoftmax),
            "grad" => Ok(Suite::Grad),
            "all" => Ok(Suite::All),
            other => Err(DssError::InvalidArgument(format!("unknown suite '{other}'"))),
        }
    }
}

/// Result of one trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub suite: Suite,
    pub trial: usize,
    pub max_err: f64,
    pub tol: f64,
    /// Instance description for reproduction.
    pub detail: String,
}

impl TrialOutcome {
    pub fn passed(&self) -> bool {
        self.max_err.is_finite() && self.max_err < self.tol
    }
}

impl fmt::Display for TrialOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} trial {}: max_err={:.3e} tol={:.0e} {}",
            self.suite,
            self.trial,
            self.max_err,
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, |m, d| if d.is_nan() { f64::NAN } else { m.max(d) })
}

fn normal_c(rng: &mut SplitMix64) -> Complex {
    let (re, im) = rng.normal_pair();
    Complex::new(re, im)
}

/// A random diagonalizable system `A = V·diag(λ)·V⁻¹`.
#[derive(Debug, Clone)]
pub struct Prop1Instance {
    pub lambda: Vec<Complex>,
    pub v: CMatrix,
    pub b: Vec<Complex>,
    pub c: Vec<Complex>,
    pub delta: f64,
    pub l: usize,
}

impl Prop1Instance {
    /// `N ≤ 8`, `Re λ ∈ [−2, −0.05]`, `Im λ ∈ [−3, 3]`, `Δ ∈ [0.01, 0.5]`,
    /// `L ≤ 64`, `cond(V) ≤ 100`.
    pub fn random(rng: &mut SplitMix64) -> Result<Self> {
        let n = rng.int_range(1, 8);
        let lambda: Vec<Complex> =
            (0..n).map(|_| Complex::new(-rng.uniform(0.05, 2.0), rng.uniform(-3.0, 3.0))).collect();
        let delta = rng.uniform(0.01, 0.5);
        let l = rng.int_range(1, 64);
        let v = loop {
            let spread = rng.uniform(0.1, 1.5) / (n as f64).sqrt();
            let v = CMatrix::from_fn(n, n, |i, j| {
                let g = normal_c(rng) * spread;
                if i == j {
                    g + 1.0
                } else {
                    g
                }
            });
            if v.condition_number()? <= MAX_CONDITION {
                break v;
            }
        };
        let b = (0..n).map(|_| normal_c(rng)).collect();
        let c = (0..n).map(|_| normal_c(rng)).collect();
        Ok(Self { lambda, v, b, c, delta, l })
    }

    pub fn system(&self) -> Result<GeneralSSM> {
        let a = self.v.matmul(&CMatrix::diag(&self.lambda)).matmul(&self.v.inverse()?);
        Ok(GeneralSSM { a, b: self.b.clone(), c: self.c.clone() })
    }

    /// `(CV)ᵀ` and `V⁻¹B`.
    pub fn diagonal_factors(&self) -> Result<(Vec<Complex>, Vec<Complex>)> {
        let cv = self.v.vecmat(&self.c);
        let n = self.lambda.len();
        let b_col = CMatrix::from_fn(n, 1, |i, _| self.b[i]);
        let vinvb = self.v.solve(&b_col)?;
        Ok((cv, (0..n).map(|i| vinvb[(i, 0)]).collect()))
    }

    pub fn describe(&self) -> String {
        let fmt_c = |v: &[Complex]| v.iter().map(|z| format!("{:.17e}{:+.17e}i", z.re, z.im)).collect::<Vec<_>>().join(" ");
        format!("N={} L={} delta={:.17e} lambda=[{}]", self.lambda.len(), self.l, self.delta, fmt_c(&self.lambda))
    }
}

/// Errors of both closed forms against the dense oracle.
#[derive(Debug, Clone, Copy)]
pub struct Prop1Errors {
    /// exp kernel with `w̃` vs the dense kernel.
    pub exp: f64,
    /// softmax kernel with `w` vs the dense kernel and vs the diagonal
    /// system `(Λ, (e^{LλΔ} − 1)⁻¹, w)`.
    pub softmax: f64,
}

pub fn prop1_errors(inst: &Prop1Instance, softmax_eps_value: f64) -> Result<Prop1Errors> {
    let oracle = general_ssm_kernel(&inst.system()?, inst.delta, inst.l)?;
    let (cv, vinvb) = inst.diagonal_factors()?;
    let (w_tilde, w) = prop1_weights(&cv, &vinvb, &inst.lambda, inst.delta, inst.l)?;
    let exp_params = KernelParams::from_lambda(Variant::Exp, &inst.lambda, w_tilde, inst.delta)?;
    let k_exp = dss_exp_kernel(&exp_params, inst.l)?;
    let soft_params = KernelParams::from_lambda(Variant::Softmax, &inst.lambda, w.clone(), inst.delta)?;
    let k_soft = dss_softmax_kernel_eps(&soft_params, inst.l, softmax_eps_value)?;
    let b_scaled: Vec<Complex> = inst
        .lambda
        .iter()
        .map(|lam| Complex::new(1.0, 0.0) / ((lam * (inst.delta * inst.l as f64)).exp() - 1.0))
        .collect();
    let diag_system = GeneralSSM { a: CMatrix::diag(&inst.lambda), b: b_scaled, c: w };
    let oracle_b = general_ssm_kernel(&diag_system, inst.delta, inst.l)?;
    Ok(Prop1Errors {
        exp: max_abs_diff(&oracle.values, &k_exp.values),
        softmax: max_abs_diff(&oracle.values, &k_soft.values).max(max_abs_diff(&oracle_b.values, &k_soft.values)),
    })
}

fn prop1_trial(rng: &mut SplitMix64, trial: usize) -> Result<TrialOutcome> {
    let inst = Prop1Instance::random(rng)?;
    let e = prop1_errors(&inst, VERIFY_EPS)?;
    Ok(TrialOutcome {
        suite: Suite::Prop1,
        trial,
        max_err: e.exp.max(e.softmax),
        tol: PROP1_TOL,
        detail: format!("{} exp_err={:.3e} softmax_err={:.3e}", inst.describe(), e.exp, e.softmax),
    })
}

/// Random recurrence instance: exp or softmax parameters with `N ≤ 16`.
/// Softmax eigenvalues take either sign of real part.
pub fn random_recurrence_params(rng: &mut SplitMix64, variant: Variant) -> Result<KernelParams> {
    let n = rng.int_range(1, 16);
    let lambda: Vec<Complex> = (0..n)
        .map(|_| {
            let re = match variant {
                Variant::Softmax => rng.uniform(-2.0, 2.0),
                _ => -rng.uniform(0.01, 2.0),
            };
            Complex::new(re, rng.uniform(-4.0, 4.0))
        })
        .collect();
    let w = (0..n).map(|_| normal_c(rng)).collect();
    KernelParams::from_lambda(variant, &lambda, w, rng.uniform(1e-3, 0.1).max(1e-3))
}

pub fn recurrence_error(p: &KernelParams, u: &[f64]) -> Result<f64> {
    let l = u.len();
    let (y, kernel) = match p.variant {
        Variant::Exp => (run_exp(p, u, None)?.0, dss_exp_kernel(p, l)?),
        Variant::Softmax => (run_softmax_stable(p, u)?.0, dss_softmax_kernel(p, l)?),
        Variant::ExpNoScale => {
            return Err(DssError::InvalidArgument("recurrence suite covers exp and softmax".into()))
        }
    };
    Ok(max_abs_diff(&y, &causal_conv_fft(&kernel, u)?))
}

fn recurrence_trial(rng: &mut SplitMix64, trial: usize, l: usize) -> Result<TrialOutcome> {
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for variant in [Variant::Exp, Variant::Softmax] {
        let p = random_recurrence_params(rng, variant)?;
        let u: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        let err = recurrence_error(&p, &u)?;
        worst = if err.is_nan() { f64::NAN } else { worst.max(err) };
        detail.push_str(&format!(
            "{variant}: N={} delta={:.17e} lambda_re={:?} lambda_im={:?} err={:.3e}; ",
            p.n(),
            p.delta(),
            p.lambda_re,
            p.lambda_im,
            err
        ));
    }
    Ok(TrialOutcome { suite: Suite::Recurrence, trial, max_err: worst, tol: RECURRENCE_TOL, detail })
}

/// A `c` with `|Re c| ∈ [0.05, 3]`, `|Im c| ≤ 4π`, at least `0.05` from every
/// pole `−2πik/L`.
pub fn random_fft_softmax_point(rng: &mut SplitMix64, l: usize) -> Complex {
    loop {
        let re = rng.uniform(0.05, 3.0) * if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
        let c = Complex::new(re, rng.uniform(-4.0 * PI, 4.0 * PI));
        if pole_distance(c, l) >= 0.05 {
            return c;
        }
    }
}

/// Distance from `c` to the nearest point of `{−2πik/L}`.
pub fn pole_distance(c: Complex, l: usize) -> f64 {
    let step = 2.0 * PI / l as f64;
    let nearest = (-c.im / step).round();
    (c - Complex::new(0.0, -step * nearest)).norm()
}

pub fn fft_softmax_error(c: Complex, l: usize) -> Result<f64> {
    let fast = softmax_via_fft(c, l)?;
    let row: Vec<Complex> = (0..l).map(|k| c * k as f64).collect();
    let direct = softmax_eps(&row, VERIFY_EPS)?;
    Ok(fast.iter().zip(&direct).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
}

fn fft_softmax_trial(rng: &mut SplitMix64, trial: usize) -> Result<TrialOutcome> {
    let l = [8, 64, 1024][rng.int_range(0, 2)];
    let c = random_fft_softmax_point(rng, l);
    let err = fft_softmax_error(c, l)?;
    Ok(TrialOutcome {
        suite: Suite::FftSoftmax,
        trial,
        max_err: err,
        tol: FFT_SOFTMAX_TOL,
        detail: format!("c={:.17e}{:+.17e}i L={l}", c.re, c.im),
    })
}

/// Largest per-parameter relative error `|g − g_fd| / max(|g|, 1e-8)`.
pub fn gradient_error(p: &KernelParams, upstream: &[f64]) -> Result<f64> {
    let l = upstream.len();
    let analytic = kernel_grad_exp(p, l, upstream)?.to_flat();
    let loss = |theta: &[f64]| -> f64 {
        let q = p.with_flat(theta).expect("same layout");
        let k = dss_exp_kernel(&q, l).expect("valid exp parameters");
        k.values.iter().zip(upstream).map(|(a, b)| a * b).sum()
    };
    let numeric = finite_diff_grad(loss, &p.to_flat(), GRAD_FD_STEP);
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(g, f)| (g - f).abs() / g.abs().max(1e-8))
        .fold(0.0, f64::max))
}

/// Exp-variant parameters with `N ≤ 4` and an upstream vector of length `L ≤ 32`.
pub fn random_grad_instance(rng: &mut SplitMix64) -> Result<(KernelParams, Vec<f64>)> {
    let n = rng.int_range(1, 4);
    let l = rng.int_range(1, 32);
    let lambda: Vec<Complex> = (0..n).map(|_| Complex::new(-rng.uniform(0.05, 2.0), rng.uniform(-3.0, 3.0))).collect();
    let w = (0..n).map(|_| normal_c(rng)).collect();
    let p = KernelParams::from_lambda(Variant::Exp, &lambda, w, rng.uniform(0.01, 0.5))?;
    let upstream = (0..l).map(|_| rng.normal()).collect();
    Ok((p, upstream))
}

fn grad_trial(rng: &mut SplitMix64, trial: usize) -> Result<TrialOutcome> {
    let (p, upstream) = random_grad_instance(rng)?;
    let err = gradient_error(&p, &upstream)?;
    Ok(TrialOutcome {
        suite: Suite::Grad,
        trial,
        max_err: err,
        tol: GRAD_REL_TOL,
        detail: format!("N={} L={} theta={:?}", p.n(), upstream.len(), p.to_flat()),
    })
}

/// Sequence length used by the recurrence suite.
pub const RECURRENCE_SUITE_LEN: usize = 4096;

/// Runs `trials` trials of every member of `suite`. Each member draws from
/// its own stream seeded from `seed`.
pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<Vec<TrialOutcome>> {
    let mut out = Vec::new();
    for (idx, member) in suite.members().into_iter().enumerate() {
        let mut rng = SplitMix64::new(seed.wrapping_add(0x1000 * idx as u64));
        for trial in 0..trials {
            out.push(match member {
                Suite::Prop1 => prop1_trial(&mut rng, trial)?,
                Suite::Recurrence => recurrence_trial(&mut rng, trial, RECURRENCE_SUITE_LEN)?,
                Suite::FftSoftmax => fft_softmax_trial(&mut rng, trial)?,
                Suite::Grad => grad_trial(&mut rng, trial)?,
                Suite::All => unreachable!("expanded above"),
            });
        }
    }
    Ok(out)
}
