use alloc::string::String;

/// Errors produced by the learning, preconditioning, and analysis routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not Hurwitz (max real part {max_real:.3e})")]
    NotHurwitz { max_real: f64 },

    #[error("simulation produced non-finite values at t = {time}")]
    NonFinite { time: f64 },

    #[error("rank condition violated: rank {rank} < required {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("least-squares residual {relative:.3e} exceeds tolerance {tolerance:.1e}")]
    InconsistentData { relative: f64, tolerance: f64 },

    #[error("gain norm {norm:.3e} exceeded divergence bound at iteration {iteration}")]
    Diverged { iteration: usize, norm: f64 },

    #[error("iteration did not converge after {iterations} steps")]
    NotConverged { iterations: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
