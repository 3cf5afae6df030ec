use thiserror::Error;

/// Errors produced by kernel construction, transforms and the layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DssError {
    #[error("empty vector")]
    EmptyVector,
    #[error("singular lambda")]
    SingularLambda,
    #[error("softmax weight undefined")]
    SoftmaxWeightUndefined,
    #[error("weight overflow")]
    WeightOverflow,
    #[error("matrix not symmetric")]
    NotSymmetric,
    #[error("eigensolver failure: {0}")]
    EigensolverFailure(String),
    #[error("A not invertible")]
    NotInvertible,
    #[error("matrix exponential did not converge")]
    MatexpNonConvergence,
    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("FFT softmax singular")]
    FftSoftmaxSingular,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("recurrence horizon exceeded: step {step} with kernel length {len}")]
    HorizonExceeded { step: usize, len: usize },
    #[error("training diverged at step {0}")]
    Diverged(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, DssError>;
