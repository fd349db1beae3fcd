use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// `score` is the contrast or significance that fell short of `threshold`.
    #[error("no atoms detected (score {score:.2} below threshold {threshold})")]
    NoAtoms { score: f64, threshold: f64 },

    #[error("insufficient gradient diversity: {surviving} bins survived, at least 3 required")]
    InsufficientGradient { surviving: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("density too high: placed {placed} of {target} sites after {attempts} attempts")]
    DensityTooHigh {
        placed: usize,
        target: usize,
        attempts: usize,
    },

    #[error("numerical check failed: {0}")]
    Numerical(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] ::image::ImageError),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attach a pipeline stage label to an error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
