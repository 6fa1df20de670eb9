use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evaluation produced a non-finite value at point {point}")]
    NonFinite { point: usize },

    #[error("retry budget exhausted after {attempts} attempts for objective {objective}")]
    RetryBudgetExhausted { objective: usize, attempts: usize },

    #[error("unknown benchmark: {0}")]
    UnknownBenchmark(String),

    #[error("unsupported dimensionality d={d} for {what}")]
    UnsupportedDimension { what: String, d: usize },

    #[error("empty box: dimension {dim} has lo={lo} >= hi={hi}")]
    EmptyBox { dim: usize, lo: f64, hi: f64 },

    #[error("dimensional violation: d + m = {d} + {m} exceeds nu = {nu}")]
    DimensionalViolation { d: usize, m: usize, nu: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("too few points: need {need}, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward already ran on this tape; reset gradients first")]
    BackwardTwice,

    #[error("loss is not a scalar (shape {0:?})")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("parameter tree mismatch: {0}")]
    TreeMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    TensorShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing records: {0}")]
    MissingRecords(String),

    #[error("inconsistent table: {0}")]
    Inconsistent(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
