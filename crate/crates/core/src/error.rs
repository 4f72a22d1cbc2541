use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing header key `{0}`")]
    MissingKey(String),
    #[error("malformed header value for `{key}`: {value}")]
    BadHeader { key: String, value: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("unsupported type: {0}")]
    UnsupportedType(String),
    #[error("voxel label {0} is not in the label map")]
    UnmappedLabel(u8),
    #[error("value {0} lies outside the [-1000, 400] HU window")]
    OutOfWindow(i32),
    #[error("slice index {index} has no neighbours inside depth {depth}")]
    OutOfRange { index: usize, depth: usize },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad magic bytes in weight container")]
    BadMagic,
    #[error("tensor name mismatch: {0}")]
    NameMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid fold count k={k} for {n} ids")]
    InvalidK { k: usize, n: usize },
    #[error("both masks are empty")]
    BothEmpty,
    #[error("no slice contains lung in either mask")]
    NoIncludedSlices,
    #[error("no matching pair for scan `{0}`")]
    MissingPair(String),
    #[error("weights do not match the network: {0}")]
    BadWeights(String),
}

impl Error {
    /// Stable identifier of the error variant, used in machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::MissingKey(_) => "MissingKey",
            Error::BadHeader { .. } => "BadHeader",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::UnsupportedType(_) => "UnsupportedType",
            Error::UnmappedLabel(_) => "UnmappedLabel",
            Error::OutOfWindow(_) => "OutOfWindow",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::GeometryMismatch(_) => "GeometryMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::BadMagic => "BadMagic",
            Error::NameMismatch(_) => "NameMismatch",
            Error::EmptyDataset => "EmptyDataset",
            Error::InvalidK { .. } => "InvalidK",
            Error::BothEmpty => "BothEmpty",
            Error::NoIncludedSlices => "NoIncludedSlices",
            Error::MissingPair(_) => "MissingPair",
            Error::BadWeights(_) => "BadWeights",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
