use std::path::PathBuf;

use gradcore::GradError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] GradError),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid camera: {0}")]
    Camera(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("march produced a non-finite depth at pixel ({u}, {v}): {detail}")]
    March { u: usize, v: usize, detail: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint hash mismatch: {0}")]
    HashMismatch(String),

    #[error("checkpoint architecture differs from the expected config: {0}")]
    ConfigMismatch(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: u64, detail: String },

    #[error("infeasible plan: {0}")]
    Infeasible(String),

    #[error("task `{task}` is incompatible with the trajectory: {detail}")]
    IncompatibleTask { task: String, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
