use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("roi capacity exceeded: {requested} heads requested but roi of area {roi_area:.1} px² holds at most {capacity}")]
    Capacity {
        requested: usize,
        capacity: usize,
        roi_area: f64,
    },

    #[error("dot {index} at ({x}, {y}) lies outside the {width}x{height} image")]
    DotOutside {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("record {id} is missing attribute `{field}`")]
    MissingAttribute { id: String, field: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("training diverged at step {step} (last finite loss {last_finite:?} at step {last_finite_step:?})")]
    Diverged {
        step: usize,
        last_finite: Option<f64>,
        last_finite_step: Option<usize>,
    },

    #[error("mode collapse: translated-batch variance below {threshold} for {epochs} consecutive epochs (last {variance:e})")]
    ModeCollapse {
        threshold: f64,
        epochs: usize,
        variance: f64,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png error: {0}")]
    Png(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
