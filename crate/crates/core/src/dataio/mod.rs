//! Annotation files, dataset splits, landmark-group averaging and the
//! versioned model container.

mod annotations;
mod container;
mod groups;
mod splits;

pub use annotations::{
    load_annotations, parse_annotations_json, parse_points_csv, write_annotations, AnnotationFile, AnnotationRecord,
    EyeConvention, Gender, Pose, Schema, Source, ANNOTATION_FORMAT, ANNOTATION_VERSION,
};
pub use container::{
    decode_bundle, encode_bundle, load_bundle, save_bundle, ModelBundle, Section, CONTAINER_MAGIC, CONTAINER_VERSION,
};
#[doc(hidden)]
pub use container::encode_with_version;
pub use groups::GroupSpec;
pub use splits::{make_splits, split_from_partition, PoseFilter, SplitManifest, MIN_SPLIT_RECORDS};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("group for {landmark} references point {index}, but the format has {n_points} points")]
    IndexOutOfRange {
        landmark: String,
        index: usize,
        n_points: usize,
    },
    #[error("invalid group specification: {0}")]
    InvalidGroupSpec(String),
    #[error("need at least {required} records, got {got}")]
    TooFewRecords { got: usize, required: usize },
    #[error("duplicate face id `{0}`")]
    DuplicateFaceId(String),
    #[error("invalid split manifest: {0}")]
    InvalidManifest(String),
    #[error("unsupported container version {found} (this build reads major version {supported})")]
    VersionMismatch { found: String, supported: u32 },
    #[error("checksum mismatch in section `{section}`")]
    ChecksumMismatch { section: String },
    #[error("malformed container: {0}")]
    MalformedContainer(String),
    #[error("container has no section `{0}`")]
    MissingSection(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub fn kind(&self) -> &'static str {
        match self {
            DataError::Parse { .. } => "ParseError",
            DataError::IndexOutOfRange { .. } => "IndexOutOfRange",
            DataError::InvalidGroupSpec(_) => "InvalidGroupSpec",
            DataError::TooFewRecords { .. } => "TooFewRecords",
            DataError::DuplicateFaceId(_) => "DuplicateFaceId",
            DataError::InvalidManifest(_) => "InvalidManifest",
            DataError::VersionMismatch { .. } => "VersionMismatch",
            DataError::ChecksumMismatch { .. } => "ChecksumMismatch",
            DataError::MalformedContainer(_) => "MalformedContainer",
            DataError::MissingSection(_) => "MissingSection",
            DataError::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

type Result<T> = std::result::Result<T, DataError>;
