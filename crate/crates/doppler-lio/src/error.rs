//! Crate-wide error type.
//!
//! Variants are grouped by the failure class they represent so the CLI can
//! map them onto stable exit codes: configuration problems, input data
//! problems, and numerical failures.

use thiserror::Error;

/// Errors raised by the odometry toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad or inconsistent configuration (unknown key, non-positive-definite
    /// covariance, invalid threshold, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or missing input data (unparseable record, timestamp out of
    /// bounds, missing file, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure (singular system, covariance lost positive
    /// definiteness, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A point with zero norm cannot be projected to spherical coordinates.
    #[error("invalid point: zero-norm coordinates")]
    InvalidPoint,

    /// Query time outside the span covered by the trajectory.
    #[error("query time {tau} outside trajectory span [{start}, {end}]")]
    OutOfSpan { tau: f64, start: f64, end: f64 },

    /// Bin index outside the configured grid.
    #[error("bin ({row}, {col}) outside grid ({rows} x {cols})")]
    BinOutOfGrid {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    /// The assembled information matrix is singular; the estimate is not
    /// unique along `nullity` directions.
    #[error("rank-deficient system: {nullity} unconstrained direction(s)")]
    RankDeficient { nullity: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::InvalidPoint | Error::Io(_) => 3,
            Error::Numerical(_)
            | Error::OutOfSpan { .. }
            | Error::BinOutOfGrid { .. }
            | Error::RankDeficient { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
