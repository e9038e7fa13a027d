use std::path::PathBuf;

use thiserror::Error;

use crate::segmenter::SegmentError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `line` is 1-based.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no valid outlet: raster has no valid cells to drain from")]
    NoOutlet,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("could not place {requested} non-overlapping pits after {attempts} attempts")]
    Placement { requested: usize, attempts: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Segment(#[from] SegmentError),

    #[error("patch {patch_id}: {source}")]
    Patch {
        patch_id: String,
        #[source]
        source: SegmentError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the caller's inputs (files, config, arguments)
    /// rather than by the pipeline or a backend.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::InvalidRaster(_)
                | Error::ShapeMismatch(_)
                | Error::NoOutlet
                | Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}
