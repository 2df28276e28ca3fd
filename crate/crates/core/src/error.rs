use std::path::PathBuf;

use sftik_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("cutoff {fc_hz} Hz is not below the Nyquist frequency {nyquist_hz} Hz")]
    Nyquist { fc_hz: f64, nyquist_hz: f64 },
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("{}: format error at byte {offset}: {msg}", path.display())]
    Format {
        path: PathBuf,
        offset: usize,
        msg: String,
    },
    #[error("{}: corrupt payload: {msg}", path.display())]
    Corruption { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("training diverged at step {step} (lr {lr:e}, grad norm {grad_norm:e}, loss {loss})")]
    Diverged {
        step: u64,
        lr: f64,
        grad_norm: f64,
        loss: f64,
    },
    #[error("{} already exists (use --force to overwrite)", .0.display())]
    Exists(PathBuf),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
