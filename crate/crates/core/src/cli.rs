//! Command-line front end. Exit codes: 0 success, 1 invalid flags (usage on
//! stderr), 2 I/O or input errors, 3 failed check suite, 4 training
//! divergence, 5 toy training finished without reaching the target lag.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checks::{run_suite, Suite};
use crate::cnum::{Complex, DEFAULT_EPS};
use crate::error::DssError;
use crate::fmt::csv_row;
use crate::kernel::{compute_kernel, dss_softmax_kernel_eps, Kernel, KernelParams, Variant};
use crate::layer::{init_layer, kernel_stats, ssm_outputs, LayerParams, Mode, SeqBatch, TrainConfig};
use crate::rng::SplitMix64;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_TARGET_MISSED: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "dss", about = "Diagonal state space kernels, checks and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Exp,
    Softmax,
    #[value(name = "exp_no_scale", alias = "exp-no-scale")]
    ExpNoScale,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Exp => Variant::Exp,
            VariantArg::Softmax => Variant::Softmax,
            VariantArg::ExpNoScale => Variant::ExpNoScale,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SuiteArg {
    Prop1,
    Recurrence,
    Fftsoftmax,
    Grad,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Prop1 => Suite::Prop1,
            SuiteArg::Recurrence => Suite::Recurrence,
            SuiteArg::Fftsoftmax => Suite::FftSoftmax,
            SuiteArg::Grad => Suite::Grad,
            SuiteArg::All => Suite::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchMode {
    Conv,
    Recurrent,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one kernel as CSV.
    Kernel {
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long)]
        l: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample time Δ (overrides the sampled one).
        #[arg(long)]
        delta: Option<f64>,
        /// Raw `lambda_re` parameters, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lambda_re: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lambda_im: Option<Vec<f64>>,
        /// Weights as `re,im` pairs, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        w: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run seeded cross-oracle suites.
    Check {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time kernel construction, FFT convolution and the recurrence.
    Bench {
        #[arg(long, value_delimiter = ',', required = true)]
        l: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        h: usize,
        #[arg(long, default_value_t = 1)]
        b: usize,
        #[arg(long, value_enum, default_value_t = BenchMode::Both)]
        mode: BenchMode,
        #[arg(long, value_enum, default_value_t = VariantArg::Exp)]
        variant: VariantArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Normalized kernel profiles of a layer, plus argmax statistics.
    Heatmap {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        l: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a kernel to a delayed impulse.
    TrainToy {
        #[arg(long)]
        lag: usize,
        #[arg(long)]
        l: usize,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write freshly initialized layer parameters as JSON.
    Init {
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[arg(long)]
        h: usize,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Io(String),
    Code(i32, String),
}

impl From<DssError> for Failure {
    fn from(e: DssError) -> Self {
        Failure::Io(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = Cli::command().error(ErrorKind::ValueValidation, msg).print();
            EXIT_USAGE
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            EXIT_IO
        }
        Err(Failure::Code(code, msg)) => {
            if !msg.is_empty() {
                eprintln!("{msg}");
            }
            code
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Kernel { variant, n, l, seed, delta, lambda_re, lambda_im, w, eps, out } => {
            cmd_kernel(variant.into(), n, l, seed, delta, lambda_re, lambda_im, w, eps, out.as_deref())
        }
        Command::Check { suite, trials, seed } => cmd_check(suite.into(), trials, seed),
        Command::Bench { l, n, h, b, mode, variant, seed, out } => {
            cmd_bench(&l, n, h, b, mode, variant.into(), seed, out.as_deref())
        }
        Command::Heatmap { params, l, out } => cmd_heatmap(&params, l, &out),
        Command::TrainToy { lag, l, n, steps, lr, seed, out } => {
            cmd_train_toy(TrainConfig { n, l, lag, steps, lr, seed }, out.as_deref())
        }
        Command::Init { variant, h, n, seed, out } => {
            if h == 0 || n == 0 {
                return Err(Failure::Usage("--h and --n must be positive".into()));
            }
            let p = init_layer(h, n, variant.into(), seed)?;
            emit(out.as_deref(), &(p.to_json() + "\n"))
        }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Failure::Io(e.to_string()))
        }
    }
}

/// CSV with a `k0,k1,…` header and one row per kernel.
pub fn kernels_csv(rows: &[Vec<f64>]) -> String {
    let width = rows.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..width).map(|k| format!("k{k}")).collect();
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&csv_row(r));
        s.push('\n');
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn cmd_kernel(
    variant: Variant,
    n: usize,
    l: usize,
    seed: u64,
    delta: Option<f64>,
    lambda_re: Option<Vec<f64>>,
    lambda_im: Option<Vec<f64>>,
    w: Option<Vec<f64>>,
    eps: f64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    if n == 0 || l == 0 {
        return Err(Failure::Usage("--n and --l must be positive".into()));
    }
    if !(eps > 0.0) {
        return Err(Failure::Usage("--eps must be positive".into()));
    }
    let base = init_layer(1, n, variant, seed)?.kernel_params(0)?;
    let lambda_re = lambda_re.unwrap_or(base.lambda_re);
    let lambda_im = lambda_im.unwrap_or(base.lambda_im);
    let w = match w {
        None => base.w,
        Some(flat) => {
            if flat.len() != 2 * n {
                return Err(Failure::Usage(format!("--w needs {} values (re,im pairs), got {}", 2 * n, flat.len())));
            }
            flat.chunks(2).map(|p| Complex::new(p[0], p[1])).collect()
        }
    };
    if lambda_re.len() != n || lambda_im.len() != n {
        return Err(Failure::Usage(format!("--lambda-re and --lambda-im need {n} values")));
    }
    let delta_log = match delta {
        Some(d) if d > 0.0 => d.ln(),
        Some(_) => return Err(Failure::Usage("--delta must be positive".into())),
        None => base.delta_log,
    };
    let p = KernelParams::new(variant, lambda_re, lambda_im, w, delta_log)?;
    let k: Kernel = match variant {
        Variant::Softmax => dss_softmax_kernel_eps(&p, l, eps)?,
        _ => compute_kernel(&p, l)?,
    };
    emit(out, &kernels_csv(&[k.values]))
}

fn cmd_check(suite: Suite, trials: usize, seed: u64) -> Result<(), Failure> {
    if trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    let outcomes = run_suite(suite, trials, seed)?;
    let mut stdout = io::stdout().lock();
    let mut failures = Vec::new();
    for o in &outcomes {
        let _ = writeln!(stdout, "{o}");
        if !o.passed() {
            failures.push(format!("{o}\n  reproduce with: {}", o.detail));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Code(EXIT_CHECK_FAILED, failures.join("\n")))
    }
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    ls: &[usize],
    n: usize,
    h: usize,
    b: usize,
    mode: BenchMode,
    variant: Variant,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    if ls.is_empty() || ls.contains(&0) || n == 0 || h == 0 || b == 0 {
        return Err(Failure::Usage("--l entries, --n, --h and --b must be positive".into()));
    }
    let params = init_layer(h, n, variant, seed)?;
    let mut rng = SplitMix64::new(seed ^ 0xB3C4);
    let mut csv = String::from("L,kernel_ms,conv_ms,recur_ms\n");
    for &l in ls {
        let u = SeqBatch::from_vec(b, h, l, (0..b * h * l).map(|_| rng.normal()).collect())?;
        let (mut kernel_ms, mut conv_ms, mut recur_ms) = (String::new(), String::new(), String::new());
        if mode != BenchMode::Recurrent {
            let start = Instant::now();
            for i in 0..h {
                compute_kernel(&params.kernel_params(i)?, l)?;
            }
            let k = millis(start);
            let start = Instant::now();
            ssm_outputs(&params, &u, Mode::Conv, None)?;
            // ssm_outputs rebuilds the kernels; report only the convolution share.
            conv_ms = format!("{:.3}", (millis(start) - k).max(0.0));
            kernel_ms = format!("{k:.3}");
        }
        if mode != BenchMode::Conv {
            let start = Instant::now();
            ssm_outputs(&params, &u, Mode::Recurrent, None)?;
            recur_ms = format!("{:.3}", millis(start));
        }
        csv.push_str(&format!("{l},{kernel_ms},{conv_ms},{recur_ms}\n"));
    }
    emit(out, &csv)
}

#[derive(Serialize)]
struct HeatmapSidecar {
    l: usize,
    argmax: Vec<usize>,
    argmax_p95: usize,
    percentile_rule: &'static str,
}

/// Path of the JSON written next to a heatmap CSV.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("stats.json")
}

fn cmd_heatmap(params_path: &Path, l: usize, out: &Path) -> Result<(), Failure> {
    if l == 0 {
        return Err(Failure::Usage("--l must be positive".into()));
    }
    let text = fs::read_to_string(params_path)
        .map_err(|e| Failure::Io(format!("cannot read {}: {e}", params_path.display())))?;
    let params = LayerParams::from_json(&text)?;
    let report = kernel_stats(&params, l)?;
    let rows: Vec<Vec<f64>> = report.kernels.iter().map(|k| k.normalized_profile.clone()).collect();
    emit(Some(out), &kernels_csv(&rows))?;
    let sidecar = HeatmapSidecar {
        l,
        argmax: report.argmax_positions(),
        argmax_p95: report.argmax_p95,
        percentile_rule: "nearest-rank: ceil(0.95*H)-th smallest",
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
    emit(Some(&sidecar_path(out)), &json)
}

fn cmd_train_toy(cfg: TrainConfig, out: Option<&Path>) -> Result<(), Failure> {
    if cfg.l == 0 || cfg.lag >= cfg.l {
        return Err(Failure::Usage(format!("--lag must satisfy 0 <= lag < l (lag={}, l={})", cfg.lag, cfg.l)));
    }
    if cfg.n == 0 || !(cfg.lr > 0.0) {
        return Err(Failure::Usage("--n and --lr must be positive".into()));
    }
    let report = match crate::layer::train_toy_delay(&cfg) {
        Ok(r) => r,
        Err(DssError::Diverged(step)) => {
            return Err(Failure::Code(EXIT_DIVERGED, format!("error: training diverged at step {step}")))
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        emit(Some(path), &json)?;
    }
    println!("initial_mse={:e}", report.initial_mse);
    println!("final_mse={:e}", report.final_mse);
    println!("final_argmax={}", report.final_argmax);
    if report.final_argmax == cfg.lag {
        Ok(())
    } else {
        Err(Failure::Code(
            EXIT_TARGET_MISSED,
            format!("final argmax {} differs from lag {}", report.final_argmax, cfg.lag),
        ))
    }
}
