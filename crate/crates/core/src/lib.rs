//! Diagonal state space (DSS) sequence kernels.
//!
//! * [`cnum`]: complex helpers and the ε-regularized softmax.
//! * [`hippo`]: Skew-HiPPO initialization and a Jacobi eigensolver.
//! * [`kernel`]: the exp, softmax and exp-no-scale kernels, weight
//!   conversion from a diagonalized system, truncation and gradients.
//! * [`ssm`]: dense general state spaces (the independent oracle).
//! * [`signal`]: FFT, causal convolution and the FFT softmax.
//! * [`recurrence`]: ZOH discretization and sequential evaluation.
//! * [`layer`]: the DSS layer, kernel statistics and a toy trainer.
//! * [`checks`]: seeded cross-oracle suites used by the CLI.

pub mod checks;
pub mod cli;
pub mod cnum;
pub mod error;
pub mod fmt;
pub mod hippo;
pub mod kernel;
pub mod layer;
pub mod recurrence;
pub mod rng;
pub mod signal;
pub mod ssm;

pub use cnum::Complex;
pub use error::{DssError, Result};
pub use kernel::{Kernel, KernelParams, Variant};
pub use layer::LayerParams;
