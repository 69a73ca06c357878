use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate segment: endpoints coincide at ({0}, {1}, {2})")]
    DegenerateSegment(f64, f64, f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("scene file version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite upstream gradient at pixel ({x}, {y})")]
    NonFiniteUpstream { x: usize, y: usize },

    #[error("non-finite gradient in parameter block '{0}'")]
    NonFiniteGradient(&'static str),

    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        /// Scene before the failing step.
        last_good: Box<crate::gaussian::GaussianScene>,
    },

    #[error("synthesis backend failed at position ({:.3}, {:.3}, {:.3}), t = {t}: {message}", position[0], position[1], position[2])]
    Backend {
        position: [f64; 3],
        t: f64,
        message: String,
    },

    #[error("backend requires depth but none was provided")]
    MissingDepth,

    #[error("expected 6 cubemap faces, found {0}")]
    FaceCount(usize),

    #[error("frame count mismatch: {0} vs {1}")]
    FrameCountMismatch(usize, usize),

    #[error("inconsistent manifest: {0}")]
    Manifest(String),

    #[error("missing test render for sample '{0}'")]
    MissingRender(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
