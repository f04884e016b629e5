use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no moving points")]
    NoMovingPoints,

    #[error("all points are labeled as noise")]
    AllNoise,

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("too few correspondences: need at least 3, found {0}")]
    TooFewCorrespondences(usize),

    #[error("no correspondences within {max_dist} m at the initial pose")]
    NoCorrespondences { max_dist: f64 },

    #[error("innovation covariance is numerically singular")]
    SingularInnovation,

    #[error("lanelet {0} is degenerate (zero-length boundary)")]
    DegenerateLanelet(i64),

    #[error("map contains no polygons")]
    EmptyMap,

    #[error("unknown compass direction {0:?}")]
    UnknownCompass(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("missing pose for sensor {0:?}")]
    MissingPose(String),

    #[error("{context}: {source}")]
    Io {
        context: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let context = path.into();
        move |source| Error::Io { context, source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Error {
        Error::InvalidParameter(msg.into())
    }
}
