use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonNonConvergence { iterations: usize, residual: f64 },

    #[error("time step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("online window {window} failed: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("full-order solve for parameter {mu:?} failed: {source}")]
    Snapshot {
        mu: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("empty basis: {0}")]
    EmptyBasis(String),

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Failures while reading a dictionary container.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("not a dictionary file (bad magic)")]
    NotADictionary,

    #[error("unsupported dictionary version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("dimension mismatch in array `{name}`: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("missing array `{0}`")]
    MissingArray(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_window(self, window: usize) -> Error {
        Error::Window {
            window,
            source: Box::new(self),
        }
    }
}
