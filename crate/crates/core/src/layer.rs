//! The DSS layer: H independent diagonal-state-space kernels sharing one
//! Λ, followed by `out_t = W_out · GELU(y_t + u_t) + b_out` at every
//! position `t`.

use serde::{Deserialize, Serialize};

use crate::cnum::Complex;
use crate::error::{DssError, Result};
use crate::hippo::skew_hippo_lambda;
use crate::kernel::{compute_kernel, kernel_grad_exp, truncate_kernel, Kernel, KernelParams, Variant};
use crate::recurrence::{run_exp, run_exp_noscale, run_softmax_stable};
use crate::rng::SplitMix64;
use crate::signal::{convolve_with_spectrum, padded_spectrum};

pub const PARAMS_VERSION: u32 = 1;

/// Full layer parameters. Also the on-disk JSON layout (plus `version`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub version: u32,
    pub variant: Variant,
    pub h: usize,
    pub n: usize,
    pub lambda_re: Vec<f64>,
    pub lambda_im: Vec<f64>,
    pub delta_log: Vec<f64>,
    pub w_re: Vec<Vec<f64>>,
    pub w_im: Vec<Vec<f64>>,
    pub w_out: Vec<Vec<f64>>,
    pub b_out: Vec<f64>,
}

impl LayerParams {
    pub fn validate(&self) -> Result<()> {
        let (h, n) = (self.h, self.n);
        if h == 0 || n == 0 {
            return Err(DssError::ShapeMismatch("h and n must be positive".into()));
        }
        let rows_ok = |m: &Vec<Vec<f64>>, cols: usize| m.len() == h && m.iter().all(|r| r.len() == cols);
        if self.version != PARAMS_VERSION {
            return Err(DssError::InvalidArgument(format!("unsupported parameter version {}", self.version)));
        }
        if self.lambda_re.len() != n
            || self.lambda_im.len() != n
            || self.delta_log.len() != h
            || !rows_ok(&self.w_re, n)
            || !rows_ok(&self.w_im, n)
            || !rows_ok(&self.w_out, h)
            || self.b_out.len() != h
        {
            return Err(DssError::ShapeMismatch(format!("parameter arrays inconsistent with h={h}, n={n}")));
        }
        Ok(())
    }

    /// Kernel parameters of coordinate `idx`.
    pub fn kernel_params(&self, idx: usize) -> Result<KernelParams> {
        let w = self.w_re[idx].iter().zip(&self.w_im[idx]).map(|(&re, &im)| Complex::new(re, im)).collect();
        KernelParams::new(self.variant, self.lambda_re.clone(), self.lambda_im.clone(), w, self.delta_log[idx])
    }

    /// The kernel-side parameters as one real vector:
    /// `lambda_re ‖ lambda_im ‖ delta_log ‖ w_re ‖ w_im`.
    pub fn kernel_payload(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.n + self.h + 2 * self.h * self.n);
        v.extend(&self.lambda_re);
        v.extend(&self.lambda_im);
        v.extend(&self.delta_log);
        self.w_re.iter().for_each(|r| v.extend(r));
        self.w_im.iter().for_each(|r| v.extend(r));
        v
    }

    pub fn kernel_param_count(&self) -> usize {
        2 * self.n + self.h + 2 * self.h * self.n
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layer parameters serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s).map_err(|e| DssError::InvalidArgument(format!("parameter file: {e}")))?;
        p.validate()?;
        Ok(p)
    }
}

/// Range of the initial sample time.
pub const DELTA_MIN: f64 = 0.001;
pub const DELTA_MAX: f64 = 0.1;

/// Seeded initialization.
///
/// Λ is Skew-HiPPO (`Re λ = −½`). Draw order from the seeded stream:
/// `delta_log[h] ~ U(log 0.001, log 0.1)` for each `h`, then for each `W`
/// entry in row-major order one Box–Muller pair `(re, im)`. `W_out = I`,
/// `b_out = 0`.
pub fn init_layer(h: usize, n: usize, variant: Variant, seed: u64) -> Result<LayerParams> {
    if h == 0 {
        return Err(DssError::InvalidArgument("hidden size must be positive".into()));
    }
    let spectrum = skew_hippo_lambda(n)?;
    let lambda_re = if variant.uses_log_real_part() {
        vec![0.5f64.ln(); n]
    } else {
        spectrum.lambda_re
    };
    let mut rng = SplitMix64::new(seed);
    let delta_log = (0..h).map(|_| rng.uniform(DELTA_MIN.ln(), DELTA_MAX.ln())).collect();
    let mut w_re = vec![vec![0.0; n]; h];
    let mut w_im = vec![vec![0.0; n]; h];
    for i in 0..h {
        for j in 0..n {
            let (re, im) = rng.normal_pair();
            w_re[i][j] = re;
            w_im[i][j] = im;
        }
    }
    let w_out = (0..h).map(|i| (0..h).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    Ok(LayerParams {
        version: PARAMS_VERSION,
        variant,
        h,
        n,
        lambda_re,
        lambda_im: spectrum.lambda_im,
        delta_log,
        w_re,
        w_im,
        w_out,
        b_out: vec![0.0; h],
    })
}

/// `0.5·x·(1 + erf(x/√2))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// A batch of `B` sequences of `H`-dimensional vectors of length `L`,
/// stored `[b][h][t]` contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub b: usize,
    pub h: usize,
    pub l: usize,
    pub values: Vec<f64>,
}

impl SeqBatch {
    pub fn zeros(b: usize, h: usize, l: usize) -> Self {
        Self { b, h, l, values: vec![0.0; b * h * l] }
    }

    pub fn from_vec(b: usize, h: usize, l: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != b * h * l {
            return Err(DssError::ShapeMismatch(format!("{} values for shape ({b}, {h}, {l})", values.len())));
        }
        Ok(Self { b, h, l, values })
    }

    pub fn seq(&self, b: usize, h: usize) -> &[f64] {
        let start = (b * self.h + h) * self.l;
        &self.values[start..start + self.l]
    }

    pub fn seq_mut(&mut self, b: usize, h: usize) -> &mut [f64] {
        let start = (b * self.h + h) * self.l;
        &mut self.values[start..start + self.l]
    }

    pub fn get(&self, b: usize, h: usize, t: usize) -> f64 {
        self.values[(b * self.h + h) * self.l + t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Conv,
    Recurrent,
}

/// SSM outputs `y = K_h ∗ u_h` for every `(b, h)`.
pub fn ssm_outputs(p: &LayerParams, u: &SeqBatch, mode: Mode, kernel_limit: Option<usize>) -> Result<SeqBatch> {
    p.validate()?;
    if u.h != p.h {
        return Err(DssError::ShapeMismatch(format!("input has H={}, layer has H={}", u.h, p.h)));
    }
    if u.l == 0 {
        return Err(DssError::ShapeMismatch("sequence length must be positive".into()));
    }
    if let Some(0) = kernel_limit {
        return Err(DssError::InvalidArgument("kernel limit must be positive".into()));
    }
    if mode == Mode::Recurrent && kernel_limit.is_some() {
        return Err(DssError::InvalidArgument("kernel limit requires conv mode".into()));
    }
    let mut y = SeqBatch::zeros(u.b, u.h, u.l);
    for h in 0..p.h {
        let kp = p.kernel_params(h)?;
        match mode {
            Mode::Conv => {
                let mut k = compute_kernel(&kp, u.l)?;
                if let Some(c) = kernel_limit {
                    k = truncate_kernel(&k, c);
                }
                let spectrum = padded_spectrum(&k.values, 2 * u.l);
                for b in 0..u.b {
                    let out = convolve_with_spectrum(&spectrum, u.seq(b, h));
                    y.seq_mut(b, h).copy_from_slice(&out);
                }
            }
            Mode::Recurrent => {
                for b in 0..u.b {
                    let seq = u.seq(b, h);
                    let (out, _) = match kp.variant {
                        Variant::Exp => run_exp(&kp, seq, None)?,
                        Variant::ExpNoScale => run_exp_noscale(&kp, seq)?,
                        Variant::Softmax => run_softmax_stable(&kp, seq)?,
                    };
                    y.seq_mut(b, h).copy_from_slice(&out);
                }
            }
        }
    }
    Ok(y)
}

/// `GELU(y + u)`: everything before the output projection.
pub fn pre_projection(p: &LayerParams, u: &SeqBatch, mode: Mode, kernel_limit: Option<usize>) -> Result<SeqBatch> {
    let mut y = ssm_outputs(p, u, mode, kernel_limit)?;
    for (v, &ui) in y.values.iter_mut().zip(&u.values) {
        *v = gelu(*v + ui);
    }
    Ok(y)
}

/// Full layer forward pass.
pub fn layer_forward(p: &LayerParams, u: &SeqBatch, mode: Mode, kernel_limit: Option<usize>) -> Result<SeqBatch> {
    let act = pre_projection(p, u, mode, kernel_limit)?;
    let mut out = SeqBatch::zeros(u.b, u.h, u.l);
    for b in 0..u.b {
        for i in 0..p.h {
            let row = &p.w_out[i];
            let dst = out.seq_mut(b, i);
            dst.fill(p.b_out[i]);
            for (j, &wij) in row.iter().enumerate() {
                if wij == 0.0 {
                    continue;
                }
                for (d, &a) in dst.iter_mut().zip(act.seq(b, j)) {
                    *d += wij * a;
                }
            }
        }
    }
    Ok(out)
}

/// Location and shape of one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStat {
    pub argmax_pos: usize,
    pub normalized_profile: Vec<f64>,
}

/// `argmax_k |K_k|` (lowest index on ties, 0 for an all-zero kernel) and
/// `|K_k| / max|K|`.
pub fn kernel_stat(k: &Kernel) -> KernelStat {
    let mut argmax_pos = 0;
    let mut peak = 0.0;
    for (i, v) in k.values.iter().enumerate() {
        if v.abs() > peak {
            peak = v.abs();
            argmax_pos = i;
        }
    }
    let normalized_profile = if peak > 0.0 {
        k.values.iter().map(|v| v.abs() / peak).collect()
    } else {
        vec![0.0; k.len()]
    };
    KernelStat { argmax_pos, normalized_profile }
}

/// Nearest-rank percentile: the `⌈pct·n/100⌉`-th smallest value (1-based).
pub fn nearest_rank_percentile(values: &[usize], pct: u32) -> Option<usize> {
    if values.is_empty() || pct == 0 || pct > 100 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let rank = (pct as usize * n).div_ceil(100);
    Some(sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStatsReport {
    pub kernels: Vec<KernelStat>,
    pub argmax_p95: usize,
}

impl KernelStatsReport {
    pub fn argmax_positions(&self) -> Vec<usize> {
        self.kernels.iter().map(|k| k.argmax_pos).collect()
    }
}

/// Statistics of all H kernels at length `l`.
pub fn kernel_stats(p: &LayerParams, l: usize) -> Result<KernelStatsReport> {
    p.validate()?;
    let kernels = (0..p.h)
        .map(|h| compute_kernel(&p.kernel_params(h)?, l).map(|k| kernel_stat(&k)))
        .collect::<Result<Vec<_>>>()?;
    let positions: Vec<usize> = kernels.iter().map(|k| k.argmax_pos).collect();
    let argmax_p95 = nearest_rank_percentile(&positions, 95).expect("at least one kernel");
    Ok(KernelStatsReport { kernels, argmax_p95 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n: usize,
    pub l: usize,
    pub lag: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { n: 32, l: 1024, lag: 1000, steps: 5000, lr: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub initial_mse: f64,
    pub final_mse: f64,
    pub final_argmax: usize,
    pub history: Vec<HistoryEntry>,
}

const HISTORY_EVERY: usize = 100;

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn mse_against_impulse(k: &[f64], lag: usize) -> f64 {
    let sq: f64 = k
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = if i == lag { 1.0 } else { 0.0 };
            (v - t) * (v - t)
        })
        .sum();
    sq / k.len() as f64
}

/// Fits a single exp-variant kernel to a unit impulse at `lag` by Adam on
/// the mean squared error.
pub fn train_toy_delay(cfg: &TrainConfig) -> Result<TrainReport> {
    if cfg.l == 0 || cfg.lag >= cfg.l {
        return Err(DssError::InvalidArgument(format!("lag {} must be below length {}", cfg.lag, cfg.l)));
    }
    if !(cfg.lr > 0.0) {
        return Err(DssError::InvalidArgument("learning rate must be positive".into()));
    }
    let layer = init_layer(1, cfg.n, Variant::Exp, cfg.seed)?;
    let mut params = layer.kernel_params(0)?;
    let mut theta = params.to_flat();
    let mut opt = Adam::new(theta.len(), cfg.lr);
    let l = cfg.l;
    let mut history = Vec::new();
    let mut initial_mse = f64::NAN;
    let mut upstream = vec![0.0; l];
    for step in 0..cfg.steps {
        let k = compute_kernel(&params, l)?;
        let mse = mse_against_impulse(&k.values, cfg.lag);
        if !mse.is_finite() {
            return Err(DssError::Diverged(step));
        }
        if step == 0 {
            initial_mse = mse;
        }
        if step % HISTORY_EVERY == 0 {
            history.push(HistoryEntry { step, mse });
        }
        for (i, (u, &v)) in upstream.iter_mut().zip(&k.values).enumerate() {
            let t = if i == cfg.lag { 1.0 } else { 0.0 };
            *u = 2.0 * (v - t) / l as f64;
        }
        let grad = kernel_grad_exp(&params, l, &upstream)?.to_flat();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(DssError::Diverged(step));
        }
        opt.step(&mut theta, &grad);
        params = params.with_flat(&theta).map_err(|_| DssError::Diverged(step))?;
    }
    let k = compute_kernel(&params, l)?;
    let final_mse = mse_against_impulse(&k.values, cfg.lag);
    if !final_mse.is_finite() {
        return Err(DssError::Diverged(cfg.steps));
    }
    if cfg.steps == 0 {
        initial_mse = final_mse;
    }
    history.push(HistoryEntry { step: cfg.steps, mse: final_mse });
    Ok(TrainReport {
        config: cfg.clone(),
        initial_mse,
        final_mse,
        final_argmax: kernel_stat(&k).argmax_pos,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!(gelu(-20.0).abs() < 1e-8);
        assert!((gelu(1.0) - 0.8413447).abs() < 1e-7);
    }

    #[test]
    fn init_ranges_and_determinism() {
        for variant in [Variant::Exp, Variant::Softmax, Variant::ExpNoScale] {
            let p = init_layer(6, 8, variant, 42).unwrap();
            p.validate().unwrap();
            for d in &p.delta_log {
                let dt = d.exp();
                assert!((DELTA_MIN * (1.0 - 1e-12)..=DELTA_MAX * (1.0 + 1e-12)).contains(&dt));
            }
            let kp = p.kernel_params(0).unwrap();
            for lam in crate::kernel::effective_lambda(&kp) {
                assert!((lam.re + 0.5).abs() < 1e-15);
            }
            assert_eq!(p, init_layer(6, 8, variant, 42).unwrap());
            assert_ne!(p.w_re, init_layer(6, 8, variant, 43).unwrap().w_re);
        }
        let p = init_layer(3, 4, Variant::Softmax, 0).unwrap();
        assert!(p.lambda_re.iter().all(|&v| v == -0.5));
    }

    #[test]
    fn parameter_count() {
        let p = init_layer(5, 7, Variant::Softmax, 1).unwrap();
        assert_eq!(p.kernel_payload().len(), 2 * 7 + 5 + 2 * 5 * 7);
        assert_eq!(p.kernel_payload().len(), p.kernel_param_count());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let p = init_layer(3, 4, Variant::Exp, 0).unwrap();
        let u = SeqBatch::zeros(2, 3, 16);
        for mode in [Mode::Conv, Mode::Recurrent] {
            let out = layer_forward(&p, &u, mode, None).unwrap();
            assert!(out.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn shape_contract() {
        let p = init_layer(4, 8, Variant::Softmax, 0).unwrap();
        let mut rng = SplitMix64::new(0);
        let u = SeqBatch::from_vec(2, 4, 64, (0..2 * 4 * 64).map(|_| rng.normal()).collect()).unwrap();
        let out = layer_forward(&p, &u, Mode::Conv, None).unwrap();
        assert_eq!((out.b, out.h, out.l), (2, 4, 64));
        let bad = SeqBatch::zeros(1, 3, 8);
        assert!(matches!(layer_forward(&p, &bad, Mode::Conv, None), Err(DssError::ShapeMismatch(_))));
        assert!(layer_forward(&p, &u, Mode::Recurrent, Some(4)).is_err());
    }

    #[test]
    fn modes_agree_for_every_variant() {
        let mut rng = SplitMix64::new(8);
        for variant in [Variant::Exp, Variant::Softmax, Variant::ExpNoScale] {
            let mut p = init_layer(3, 6, variant, 5).unwrap();
            for (i, row) in p.w_out.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if i == j { 1.0 } else { 0.1 * rng.normal() };
                }
            }
            p.b_out = vec![0.3, -0.2, 0.05];
            let u = SeqBatch::from_vec(2, 3, 200, (0..2 * 3 * 200).map(|_| rng.normal()).collect()).unwrap();
            let a = layer_forward(&p, &u, Mode::Conv, None).unwrap();
            let b = layer_forward(&p, &u, Mode::Recurrent, None).unwrap();
            let err = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "{variant}: {err}");
        }
    }

    #[test]
    fn truncation_is_local() {
        let p = init_layer(2, 4, Variant::Exp, 3).unwrap();
        let mut rng = SplitMix64::new(1);
        let (l, c) = (64, 8);
        let u = SeqBatch::from_vec(1, 2, l, (0..2 * l).map(|_| rng.normal()).collect()).unwrap();
        let probe = 40;
        let mut v = u.clone();
        v.seq_mut(0, 1)[probe - c] += 3.0;
        let a = pre_projection(&p, &u, Mode::Conv, Some(c)).unwrap();
        let b = pre_projection(&p, &v, Mode::Conv, Some(c)).unwrap();
        for t in probe..l {
            assert!((a.get(0, 1, t) - b.get(0, 1, t)).abs() < 1e-12);
        }
        assert!((a.get(0, 1, probe - 1) - b.get(0, 1, probe - 1)).abs() > 1e-6);
    }

    #[test]
    fn stats_of_simple_kernels() {
        let s = kernel_stat(&Kernel::from(vec![0.5, 0.25, 0.125, 0.0625]));
        assert_eq!(s.argmax_pos, 0);
        assert_eq!(s.normalized_profile, vec![1.0, 0.5, 0.25, 0.125]);
        let mut spike = vec![0.0; 1024];
        spike[1000] = -3.0;
        assert_eq!(kernel_stat(&Kernel::from(spike)).argmax_pos, 1000);
        let z = kernel_stat(&Kernel::from(vec![0.0; 5]));
        assert_eq!(z.argmax_pos, 0);
        assert_eq!(z.normalized_profile, vec![0.0; 5]);
    }

    #[test]
    fn nearest_rank() {
        let positions: Vec<usize> = (0..20).collect();
        // ⌈0.95·20⌉ = 19th smallest.
        assert_eq!(nearest_rank_percentile(&positions, 95), Some(18));
        assert_eq!(nearest_rank_percentile(&[7], 95), Some(7));
        assert_eq!(nearest_rank_percentile(&[5, 1, 9, 3], 50), Some(3));
        assert_eq!(nearest_rank_percentile(&[], 95), None);
    }

    #[test]
    fn params_json_round_trip() {
        let p = init_layer(2, 3, Variant::ExpNoScale, 9).unwrap();
        let s = p.to_json();
        let q = LayerParams::from_json(&s).unwrap();
        assert_eq!(p, q);
        assert_eq!(s, q.to_json());
        assert!(LayerParams::from_json("{").is_err());
    }

    #[test]
    fn short_lag_training() {
        let cfg = TrainConfig { n: 16, l: 64, lag: 0, steps: 2000, lr: 1e-3, seed: 0 };
        let r = train_toy_delay(&cfg).unwrap();
        assert_eq!(r.final_argmax, 0);
        assert!(r.final_mse < r.initial_mse);
        assert_eq!(r, train_toy_delay(&cfg).unwrap());
        assert!(r.history.windows(2).all(|w| w[0].step < w[1].step));
        let bad = TrainConfig { lag: 64, ..cfg };
        assert!(train_toy_delay(&bad).is_err());
    }
}
