use thiserror::Error;

/// Errors raised by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate_innovation: innovation covariance is not positive definite")]
    DegenerateInnovation,
    #[error("empty_tracks: both tracks have no boxes")]
    EmptyTracks,
    #[error("empty_track: track {0} has no proposals")]
    EmptyTrack(u64),
    #[error("insufficient_shapes: only {0} frames have enough points for registration")]
    InsufficientShapes(usize),
    #[error("no_overlap: no correspondences within {0} m")]
    NoOverlap(f64),
    #[error("empty_cloud: chamfer distance needs two non-empty clouds")]
    EmptyCloud,
    #[error("no_ground_truth: average precision is undefined without ground truth")]
    NoGroundTruth,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("schema error in {file} at {location}: {message}")]
    Schema {
        file: String,
        location: String,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateInnovation => "degenerate_innovation",
            Error::EmptyTracks => "empty_tracks",
            Error::EmptyTrack(_) => "empty_track",
            Error::InsufficientShapes(_) => "insufficient_shapes",
            Error::NoOverlap(_) => "no_overlap",
            Error::EmptyCloud => "empty_cloud",
            Error::NoGroundTruth => "no_ground_truth",
            Error::Invalid(_) => "invalid",
            Error::Schema { .. } => "schema",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
