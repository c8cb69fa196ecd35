use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported noise model for {operation}: {kind}")]
    UnsupportedNoise {
        operation: &'static str,
        kind: &'static str,
    },

    #[error("quadrature did not converge: estimates {coarse} and {fine} differ beyond tolerance")]
    Quadrature { coarse: f64, fine: f64 },

    #[error("optimiser did not converge after {iterations} iterations (best iterate {best:?})")]
    NoConvergence { iterations: usize, best: Vec<f64> },

    #[error("root is not bracketed on [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("log-target estimate at the initial state is not finite ({0})")]
    InvalidInitialState(f64),

    #[error("estimator failure: {0}")]
    Estimator(String),

    #[error("exponential overflow in moment generating function at t = {0}")]
    MgfOverflow(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
