use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("coordinate ({x}, {y}) outside {width}x{height} raster")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("loss undefined: {0}")]
    LossUndefined(&'static str),

    #[error("statistic undefined: {0}")]
    Undefined(&'static str),

    #[error("thin-plate spline fit failed: {0}")]
    TpsFit(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("degenerate polygon at index {index}: {vertices} vertices")]
    DegeneratePolygon { index: usize, vertices: usize },

    #[error("quota infeasible for category `{category}`: {reason}")]
    QuotaInfeasible {
        category: &'static str,
        reason: String,
    },

    #[error("raster too large for finite differences: {pixels} pixels (cap {cap})")]
    TooLarge { pixels: usize, cap: usize },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
