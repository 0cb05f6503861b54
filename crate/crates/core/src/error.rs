use thiserror::Error;

/// Errors raised across the model, sampler, trainer and data layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value in {0}")]
    NonFiniteInput(String),

    #[error("non-finite gradient for parameter group `{0}`")]
    NonFiniteGradient(String),

    #[error("variable does not belong to this tape")]
    DetachedTensor,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid label {label} (class count {classes})")]
    InvalidLabel { label: i64, classes: usize },

    #[error("empty batch")]
    InvalidBatch,

    #[error("chain {chain} diverged at Langevin step {step}")]
    ChainDiverged { chain: usize, step: usize },

    #[error("need at least {needed} labels, got {got}")]
    InsufficientLabels { needed: usize, got: usize },

    #[error("parse error at line {line}{}: {message}", column.as_ref().map(|c| format!(", column `{c}`")).unwrap_or_default())]
    ParseError { line: usize, column: Option<String>, message: String },

    #[error("quadrature supports dimension 1 or 2, got {0}")]
    UnsupportedDimension(usize),

    #[error("loss is not deterministic: {first} then {second}")]
    NonDeterministicLoss { first: f64, second: f64 },

    #[error("unknown dataset kind `{0}`")]
    UnknownKind(String),

    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
