use std::path::PathBuf;

/// Errors from the IO/dataset/training layer. Split from the numeric core
/// errors so the CLI can map exit codes (data failure vs numeric failure).
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("unsupported camera model {model} (supported: PINHOLE, SIMPLE_PINHOLE)")]
    UnsupportedCameraModel { model: String },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("unsupported bit depth in {path} (8- or 16-bit PNG required)")]
    UnsupportedBitDepth { path: PathBuf },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Core(#[from] uwsplat_core::Error),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        AppError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        AppError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True when the failure is numeric (exit code 3) rather than a data
    /// problem (exit code 2).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            AppError::Core(uwsplat_core::Error::NonFiniteLoss)
                | AppError::Core(uwsplat_core::Error::DegenerateScene)
        )
    }
}
