use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} index {index} out of range (expected < {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("instance too large: {terms} trajectory terms exceed the enumeration cap {cap}")]
    InstanceTooLarge { terms: u128, cap: u128 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last step {last_step:e})")]
    NonConvergence { iterations: usize, last_step: f64 },

    #[error("no pure fixed point found: best-response iteration revisited a policy pair after {sweeps} sweeps (cycle length {})", cycle.len())]
    PolicyCycle {
        sweeps: usize,
        /// (high greedy goals, low greedy actions) for each pair on the cycle.
        cycle: Vec<(Vec<usize>, Vec<usize>)>,
    },

    #[error("integration diverged at t = {time}: norm {norm} exceeds limit {limit}")]
    Instability { time: f64, norm: f64, limit: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_index(what: &'static str, index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::OutOfRange { what, index, len })
    }
}
