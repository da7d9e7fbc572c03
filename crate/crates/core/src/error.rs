use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("data length {data} does not match shape element count {expected}")]
    LengthMismatch { expected: usize, data: usize },
    #[error("empty group")]
    EmptyGroup,
    #[error("non-finite value in tensor")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt block: {0}")]
    CorruptBlock(&'static str),
    #[error("decoded length {actual} does not match expected {expected}")]
    OutputLength { expected: usize, actual: usize },
    #[error("invalid container: {0}")]
    InvalidContainer(String),
    #[error("scratch buffer too small: need {required} bytes, have {available}")]
    ScratchTooSmall { required: usize, available: usize },
    #[error("layer index {index} out of range ({count} layers)")]
    LayerIndex { index: usize, count: usize },
    #[error("frac bits {0} outside the supported range")]
    FracBits(i32),
    #[error("export error: {0}")]
    Export(String),
    #[error("empty calibration set")]
    EmptyCalibration,
    #[error("memory constraint of {target} bytes unreachable; best achieved {best} bytes")]
    ConstraintUnreachable { target: usize, best: usize },
    #[error("dataset parse error at byte offset {offset}: {reason}")]
    Dataset { offset: usize, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
