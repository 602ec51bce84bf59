use thiserror::Error;

/// Errors produced by model construction, training and data ingestion.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation contract (shape mismatch, invalid range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A matrix factorization failed even after jitter escalation.
    #[error("numerical failure: {context} (size {size}, diag range [{diag_min:.3e}, {diag_max:.3e}], jitter {jitter:.3e})")]
    Numerical {
        context: String,
        size: usize,
        diag_min: f64,
        diag_max: f64,
        jitter: f64,
    },

    /// The ELBO became non-finite during optimization. Carries the location of
    /// the failure; the last good parameter snapshot is reported by the trainer.
    #[error("training aborted: non-finite ELBO at epoch {epoch}, step {step}")]
    TrainAbort { epoch: usize, step: usize },

    /// Malformed input file.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
