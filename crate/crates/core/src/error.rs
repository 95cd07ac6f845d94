use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes, dimensions or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),
    /// NaN/Inf or an overflowing intermediate.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// API misuse, such as running backward twice on the same graph.
    #[error("usage error: {0}")]
    Usage(String),
    /// Bad caller-supplied data (out-of-range action index, misaligned arrays).
    #[error("input error: {0}")]
    Input(String),
    /// An environment failed while stepping.
    #[error("environment fault in episode {episode}, step {step}: {message}")]
    Environment {
        episode: usize,
        step: usize,
        message: String,
    },
    /// The fixup phase exceeded its hard pass cap without satisfying the trust region.
    #[error(
        "fixup phase did not converge after {passes} passes (max KL {max_kl:.6} > eps {eps_kl}, beta {beta:.4})"
    )]
    FixupCap {
        passes: usize,
        max_kl: f64,
        eps_kl: f64,
        beta: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
