use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping used by frontends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or missing inputs named by the configuration.
    Config,
    /// Malformed or inconsistent data.
    Data,
    /// A broken internal invariant.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box [{x_min}, {y_min}, {x_max}, {y_max}]")]
    InvalidBox {
        x_min: u32,
        y_min: u32,
        x_max: u32,
        y_max: u32,
    },
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("run lengths sum to {sum}, expected {expected}")]
    MalformedRuns { sum: u64, expected: u64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("schema error in {}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
    #[error("failed to load image {}: {message}", path.display())]
    ImageLoad { path: PathBuf, message: String },
    #[error("failed to write image {}: {message}", path.display())]
    ImageSave { path: PathBuf, message: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid point grid: {0}")]
    InvalidGrid(String),
    #[error("histogram region has no contributing pixels")]
    EmptyRegion,
    #[error("histogram is constant across all bins")]
    ZeroVariance,
    #[error("feature vector has zero norm")]
    ZeroVector,
    #[error("no score for proposal {proposal_id} against class {class_id}")]
    MissingScore { proposal_id: u32, class_id: u32 },
    #[error("degenerate samples: {0}")]
    DegenerateData(String),
    #[error("no color cluster is shared across all samples")]
    NoSharedCluster,
    #[error("no cluster masks any pixel of the sample image")]
    AllZeroMasks,
    #[error("mask covers the whole image, nothing to fill from")]
    UnfillableMask,
    #[error("could not place icon {icon} without overlap in {attempts} attempts")]
    PlacementFailure { icon: usize, attempts: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing input {}: {what}", path.display())]
    MissingInput { path: PathBuf, what: String },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) | Error::MissingInput { .. } => ErrorKind::Config,
            Error::Invariant(_) => ErrorKind::Internal,
            _ => ErrorKind::Data,
        }
    }

    /// Variant name, stable across message wording changes.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidBox { .. } => "InvalidBox",
            Error::EmptyMask => "EmptyMask",
            Error::MalformedRuns { .. } => "MalformedRuns",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::Schema { .. } => "Schema",
            Error::ImageLoad { .. } => "ImageLoad",
            Error::ImageSave { .. } => "ImageSave",
            Error::Io { .. } => "Io",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::EmptyRegion => "EmptyRegion",
            Error::ZeroVariance => "ZeroVariance",
            Error::ZeroVector => "ZeroVector",
            Error::MissingScore { .. } => "MissingScore",
            Error::DegenerateData(_) => "DegenerateData",
            Error::NoSharedCluster => "NoSharedCluster",
            Error::AllZeroMasks => "AllZeroMasks",
            Error::UnfillableMask => "UnfillableMask",
            Error::PlacementFailure { .. } => "PlacementFailure",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::MissingInput { .. } => "MissingInput",
            Error::Invariant(_) => "Invariant",
        }
    }

    /// The file the error refers to, when there is one.
    pub fn path(&self) -> Option<&std::path::Path> {
        match self {
            Error::Schema { path, .. }
            | Error::ImageLoad { path, .. }
            | Error::ImageSave { path, .. }
            | Error::Io { path, .. }
            | Error::MissingInput { path, .. } => Some(path),
            _ => None,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
