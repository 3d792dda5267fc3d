use thiserror::Error;

/// Errors raised by constructors, solvers and file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("distribution needs at least 2 labels, got {0}")]
    DimensionTooSmall(usize),

    #[error("entry {index} is {value}, below the allowed tolerance")]
    NegativeEntry { index: usize, value: f64 },

    #[error("entry {index} is not a finite number")]
    NonFinite { index: usize },

    #[error("probabilities sum to {sum}, expected 1 within {tol}")]
    NotNormalized { sum: f64, tol: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("a second-order prediction needs at least one vertex")]
    EmptyPrediction,

    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("label {label} is out of range for K = {k}")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("length mismatch: {left} has {left_len} entries, {right} has {right_len}")]
    LengthMismatch {
        left: &'static str,
        left_len: usize,
        right: &'static str,
        right_len: usize,
    },

    #[error("record {0} has no label")]
    MissingLabel(String),

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("linear program did not converge after {0} iterations")]
    SolverStalled(usize),

    #[error("TV ball has more than {0} corner points; use the clipped rule for this input")]
    TooManyVertices(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value,
            range: "[0, 1]",
        })
    }
}

pub(crate) fn check_open_unit(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value,
            range: "(0, 1)",
        })
    }
}
