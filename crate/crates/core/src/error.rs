use std::path::PathBuf;

use crate::dataio::DataError;
use crate::descriptors::DescriptorError;
use crate::image::ImageError;
use crate::metrics::MetricsError;
use crate::svm::SvmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error. Module errors convert into it with `?`.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("insufficient data: {usable} usable faces, need at least {required}")]
    InsufficientData { usable: usize, required: usize },
    #[error("degenerate training labels: {0}")]
    DegenerateLabels(String),
    #[error("face `{0}` appears in both the training and the validation split")]
    SplitOverlap(String),
    #[error("sample `{face_id}` lacks {variant} landmarks")]
    MissingVariant { face_id: String, variant: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Image(e) => e.kind(),
            Error::Descriptor(e) => e.kind(),
            Error::Metrics(e) => e.kind(),
            Error::Svm(e) => e.kind(),
            Error::Data(e) => e.kind(),
            Error::InsufficientData { .. } => "InsufficientData",
            Error::DegenerateLabels(_) => "DegenerateLabels",
            Error::SplitOverlap(_) => "SplitOverlap",
            Error::MissingVariant { .. } => "MissingVariant",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
