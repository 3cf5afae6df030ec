//! Sequential (RNN-style) evaluation of diagonal state spaces.
//!
//! The N coordinates never interact, so each step is an elementwise update
//! across the state vector. The softmax variant bakes the kernel length `L`
//! into its input matrix; its stepper therefore refuses to run past step
//! `L − 1`.

use crate::cnum::{expm1, reciprocal_eps, Complex, DEFAULT_EPS};
use crate::error::{DssError, Result};
use crate::kernel::{effective_lambda, KernelParams, Variant};

const ZERO: Complex = Complex::new(0.0, 0.0);
const SINGULAR_WEIGHT_FLOOR: f64 = 1e-12;

/// Diagonal ZOH discretization: `Ā = e^{ΛΔ}`, `B̄ = Λ⁻¹(e^{ΛΔ} − I)B`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagDiscretization {
    pub a_bar: Vec<Complex>,
    pub b_bar: Vec<Complex>,
}

pub fn zoh_discretize_diag(lambda: &[Complex], b: &[Complex], delta: f64) -> Result<DiagDiscretization> {
    if lambda.len() != b.len() {
        return Err(DssError::LengthMismatch(lambda.len(), b.len()));
    }
    let mut a_bar = Vec::with_capacity(lambda.len());
    let mut b_bar = Vec::with_capacity(lambda.len());
    for (lam, bi) in lambda.iter().zip(b) {
        if lam.re == 0.0 && lam.im == 0.0 {
            return Err(DssError::SingularLambda);
        }
        let step = lam * delta;
        a_bar.push(step.exp());
        b_bar.push(expm1(step) / lam * bi);
    }
    Ok(DiagDiscretization { a_bar, b_bar })
}

/// State carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    /// `x_k`.
    pub x: Vec<Complex>,
    /// Intermediate `x̃_k` of the softmax recurrence; zeros otherwise.
    pub x_tilde: Vec<Complex>,
    /// Index of the last completed step, `−1` before the first.
    pub k: i64,
    /// `Re(λ_i) > 0`.
    pub p_flags: Vec<bool>,
}

impl RecurrentState {
    fn zeros(n: usize) -> Self {
        Self { x: vec![ZERO; n], x_tilde: vec![ZERO; n], k: -1, p_flags: vec![false; n] }
    }
}

/// Stepper for `x_k = Ā x_{k−1} + B̄ u_k`, `y_k = Re(w·x_k)`.
#[derive(Debug, Clone)]
pub struct DiagRecurrence {
    disc: DiagDiscretization,
    w: Vec<Complex>,
    state: RecurrentState,
}

impl DiagRecurrence {
    /// Exp variant (`B̄ = Λ⁻¹(e^{ΛΔ} − 1)`) or exp-no-scale (`B̄ = 1`).
    pub fn new(p: &KernelParams, x_init: Option<&[Complex]>) -> Result<Self> {
        let lambda = effective_lambda(p);
        let n = lambda.len();
        let disc = match p.variant {
            Variant::Exp => zoh_discretize_diag(&lambda, &vec![Complex::new(1.0, 0.0); n], p.delta())?,
            Variant::ExpNoScale => DiagDiscretization {
                a_bar: lambda.iter().map(|l| (l * p.delta()).exp()).collect(),
                b_bar: vec![Complex::new(1.0, 0.0); n],
            },
            Variant::Softmax => {
                return Err(DssError::InvalidArgument("use SoftmaxRecurrence for the softmax variant".into()))
            }
        };
        let mut state = RecurrentState::zeros(n);
        if let Some(x0) = x_init {
            if x0.len() != n {
                return Err(DssError::LengthMismatch(x0.len(), n));
            }
            state.x.copy_from_slice(x0);
        }
        state.p_flags = lambda.iter().map(|l| l.re > 0.0).collect();
        Ok(Self { disc, w: p.w.clone(), state })
    }

    pub fn step(&mut self, u: f64) -> f64 {
        let mut y = 0.0;
        for i in 0..self.state.x.len() {
            let x = self.disc.a_bar[i] * self.state.x[i] + self.disc.b_bar[i] * u;
            self.state.x[i] = x;
            y += (self.w[i] * x).re;
        }
        self.state.k += 1;
        y
    }

    pub fn state(&self) -> &RecurrentState {
        &self.state
    }
}

/// Runs the exp-variant recurrence from `x_init` (zero when `None`).
pub fn run_exp(p: &KernelParams, u: &[f64], x_init: Option<&[Complex]>) -> Result<(Vec<f64>, Vec<Complex>)> {
    if p.variant != Variant::Exp {
        return Err(DssError::InvalidArgument(format!("expected exp parameters, got {}", p.variant)));
    }
    run_diag(p, u, x_init)
}

/// Runs the exp-no-scale recurrence from zero.
pub fn run_exp_noscale(p: &KernelParams, u: &[f64]) -> Result<(Vec<f64>, Vec<Complex>)> {
    if p.variant != Variant::ExpNoScale {
        return Err(DssError::InvalidArgument(format!("expected exp_no_scale parameters, got {}", p.variant)));
    }
    run_diag(p, u, None)
}

fn run_diag(p: &KernelParams, u: &[f64], x_init: Option<&[Complex]>) -> Result<(Vec<f64>, Vec<Complex>)> {
    let mut rec = DiagRecurrence::new(p, x_init)?;
    let y = u.iter().map(|&v| rec.step(v)).collect();
    Ok((y, rec.state.x))
}

/// Stabilized stepper for the softmax variant with horizon `L`.
///
/// With `μ = λΔ` and `p = [Re λ > 0]`:
/// `x̃_k = e^{μ(1−p)} x̃_{k−1} + e^{−kμp} u_k` and
/// `x_k = x̃_k · e^{μp(k−(L−1))} / λ · 1/Σ_{r<L} e^{μ(1−2p)r}`.
/// The last factor equals `(e^{μ(1−2p)} − 1)/(e^{μ(1−2p)L} − 1)`; it is
/// formed with the same ε-regularized reciprocal as the kernel.
#[derive(Debug, Clone)]
pub struct SoftmaxRecurrence {
    step_exp: Vec<Complex>,
    decay: Vec<Complex>,
    out_scale: Vec<Complex>,
    w: Vec<Complex>,
    len: usize,
    state: RecurrentState,
    max_exponent_re: f64,
}

impl SoftmaxRecurrence {
    pub fn new(p: &KernelParams, len: usize, eps: f64) -> Result<Self> {
        if p.variant != Variant::Softmax {
            return Err(DssError::InvalidArgument(format!("expected softmax parameters, got {}", p.variant)));
        }
        if len == 0 {
            return Err(DssError::InvalidArgument("horizon must be positive".into()));
        }
        let lambda = effective_lambda(p);
        let delta = p.delta();
        let n = lambda.len();
        let mut state = RecurrentState::zeros(n);
        let mut max_exponent_re = f64::NEG_INFINITY;
        let mut track = |z: Complex| {
            max_exponent_re = max_exponent_re.max(z.re);
            z
        };
        let mut step_exp = Vec::with_capacity(n);
        let mut decay = Vec::with_capacity(n);
        let mut out_scale = Vec::with_capacity(n);
        for (i, lam) in lambda.iter().enumerate() {
            if lam.re == 0.0 && lam.im == 0.0 {
                return Err(DssError::SingularLambda);
            }
            let grows = lam.re > 0.0;
            state.p_flags[i] = grows;
            let mu = lam * delta;
            let directed = if grows { -mu } else { mu };
            if expm1(track(directed * len as f64)).norm() <= SINGULAR_WEIGHT_FLOOR {
                return Err(DssError::SoftmaxWeightUndefined);
            }
            let total: Complex = (0..len).map(|r| track(directed * r as f64).exp()).sum();
            out_scale.push(reciprocal_eps(total, eps) / lam);
            decay.push(if grows { Complex::new(1.0, 0.0) } else { track(mu).exp() });
            step_exp.push(mu);
        }
        Ok(Self { step_exp, decay, out_scale, w: p.w.clone(), len, state, max_exponent_re })
    }

    pub fn step(&mut self, u: f64) -> Result<f64> {
        let k = (self.state.k + 1) as usize;
        if k >= self.len {
            return Err(DssError::HorizonExceeded { step: k, len: self.len });
        }
        let back = (self.len - 1) as f64;
        let mut y = 0.0;
        for i in 0..self.w.len() {
            let mu = self.step_exp[i];
            let (inject, shift) = if self.state.p_flags[i] {
                (self.exp_tracked(-mu * k as f64), self.exp_tracked(mu * (k as f64 - back)))
            } else {
                (Complex::new(1.0, 0.0), Complex::new(1.0, 0.0))
            };
            let xt = self.decay[i] * self.state.x_tilde[i] + inject * u;
            self.state.x_tilde[i] = xt;
            let x = xt * shift * self.out_scale[i];
            self.state.x[i] = x;
            y += (self.w[i] * x).re;
        }
        self.state.k = k as i64;
        Ok(y)
    }

    fn exp_tracked(&mut self, z: Complex) -> Complex {
        self.max_exponent_re = self.max_exponent_re.max(z.re);
        z.exp()
    }

    pub fn state(&self) -> &RecurrentState {
        &self.state
    }

    /// Largest real part of any argument passed to `exp` so far.
    pub fn max_exponent_re(&self) -> f64 {
        self.max_exponent_re
    }
}

/// Runs the stabilized softmax recurrence over `u` with horizon `u.len()`.
pub fn run_softmax_stable(p: &KernelParams, u: &[f64]) -> Result<(Vec<f64>, Vec<Complex>)> {
    run_softmax_stable_eps(p, u, DEFAULT_EPS)
}

pub fn run_softmax_stable_eps(p: &KernelParams, u: &[f64], eps: f64) -> Result<(Vec<f64>, Vec<Complex>)> {
    let mut rec = SoftmaxRecurrence::new(p, u.len(), eps)?;
    let y = u.iter().map(|&v| rec.step(v)).collect::<Result<Vec<_>>>()?;
    Ok((y, rec.state.x))
}
