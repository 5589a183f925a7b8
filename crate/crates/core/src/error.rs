use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by a fitness evaluator or the remote evaluation transport.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("evaluation timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("server failed to evaluate request {id}: {message}")]
    Server { id: u64, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("structure has {got} entries, evaluator expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("evaluator rejected structure: {0}")]
    Rejected(String),
    #[error("fitness must be finite, got {0}")]
    NonFinite(f64),
    #[error("refusing to cache non-deterministic evaluator `{0}`")]
    NonDeterministic(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed architecture document: {0}")]
    Malformed(String),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("structure has {got} entries, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("value {value} at index {index} is outside 1..={max}")]
    OutOfRange { index: usize, value: i64, max: i64 },
    #[error(
        "layer `{layer}`: groups {groups} does not divide channels (in {in_ch}, out {out_ch})"
    )]
    Groups {
        layer: String,
        groups: u64,
        in_ch: u64,
        out_ch: u64,
    },
    #[error("layer `{layer}`: kernel {kernel} exceeds input extent {extent} under valid padding")]
    Spatial {
        layer: String,
        kernel: u64,
        extent: u64,
    },
    #[error("invalid step vector: {0}")]
    InvalidSteps(String),
    #[error("invalid sparsity targets: {0}")]
    InvalidTargets(String),
    #[error(
        "sparsity targets unreachable: all-minimum structure {minimum:?} reaches r_f={r_f:.6}, r_p={r_p:.6}"
    )]
    MinimumReached {
        minimum: Vec<i64>,
        r_f: f64,
        r_p: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
