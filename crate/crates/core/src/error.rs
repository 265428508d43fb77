use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The CLI maps these onto exit codes through [`Error::class`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-increasing grid at index {index}")]
    NonIncreasingGrid { index: usize },
    #[error("time grid needs at least 2 points, got {0}")]
    GridTooShort(usize),
    #[error("channel `{name}` has {got} samples, grid has {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("duplicate channel `{0}`")]
    DuplicateChannel(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("invalid window: offset {a} exceeds {b}")]
    InvalidWindow { a: f64, b: f64 },
    #[error("index {index} out of range for trace of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("reversed interval [{a}, {b}]")]
    ReversedInterval { a: f64, b: f64 },
    #[error("negative interval bound {0}")]
    NegativeBound(f64),

    #[error("division by zero")]
    DivisionByZero,
    #[error("logarithm of non-positive value {0}")]
    LogDomain(f64),

    #[error("maximum number of steps ({0}) exceeded")]
    MaxSteps(usize),
    #[error("Newton iteration failed to converge at t = {t}")]
    NewtonFailure { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("condition {condition}: {source}")]
    Condition {
        condition: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::DivisionByZero
            | Error::LogDomain(_)
            | Error::MaxSteps(_)
            | Error::NewtonFailure { .. }
            | Error::NonFiniteState { .. }
            | Error::StepUnderflow { .. }
            | Error::NonFinite(_) => ErrorClass::Numerical,
            Error::Condition { source, .. } => source.class(),
            Error::Io(_) => ErrorClass::Io,
            _ => ErrorClass::Input,
        }
    }

    pub(crate) fn in_condition(self, condition: usize) -> Error {
        Error::Condition {
            condition,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.to_string())
        } else {
            Error::Config(e.to_string())
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
