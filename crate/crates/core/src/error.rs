use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),

    #[error("singular calibration: {0}")]
    SingularCalibration(&'static str),

    #[error("no LiDAR point projects inside the image")]
    EmptyForeground,

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
