//! Error types shared across the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural problem: matrix or vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A scenario file or parameter block is invalid. `path` is a JSON
    /// pointer into the offending document where that makes sense.
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    /// An iterative or linear-algebra computation failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Every particle weight underflowed; the likelihood model cannot
    /// explain the observed measurement.
    #[error(
        "all particle weights underflowed (log-likelihood range [{min_log_lik}, {max_log_lik}])"
    )]
    AllWeightsZero { min_log_lik: f64, max_log_lik: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Dimension(_) => 2,
            Error::Numerical(_) | Error::AllWeightsZero { .. } => 3,
            Error::Io { .. } => 1,
        }
    }
}
