use std::path::PathBuf;

/// Errors produced anywhere in the navigation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty image")]
    EmptyImage,
    #[error("no navigable region")]
    NoNavigableRegion,
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("point ({x}, {y}) is outside the navigable region")]
    NotNavigable { x: f64, y: f64 },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("action index {0} out of range 0..40")]
    BadAction(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("no root in bracket: {0}")]
    NoRoot(String),
    #[error("adsorption fault: separation {separation:.3e} m below floor {floor:.3e} m")]
    Adsorption { separation: f64, floor: f64 },
    #[error("no policy loaded")]
    PolicyMissing,
    #[error("wrong control mode: {0}")]
    WrongMode(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, flags, data) rather
    /// than by an internal numerical fault.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::NonFinite(_) | Error::Shape(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
