use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed PGM: {0}")]
    MalformedPgm(String),
    #[error("unsupported PGM maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),
    #[error("truncated pixel payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid cost entry {value} at index {index}")]
    InvalidCost { index: usize, value: f64 },
    #[error("payload of {requested} bits exceeds capacity of {capacity} bits")]
    PayloadInfeasible { requested: f64, capacity: f64 },
    #[error("lambda bisection did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown tap `{0}`")]
    UnknownTap(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
