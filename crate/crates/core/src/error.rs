use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("malformed annotations: {0}")]
    MalformedAnnotations(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("incompatible frame rate: native {native_hz} Hz cannot be resampled to {target_hz} Hz")]
    IncompatibleRate { native_hz: f64, target_hz: f64 },
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("unmapped class `{raw_class}` for dataset `{dataset_id}`")]
    UnmappedClass { dataset_id: String, raw_class: String },
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("dataset `{0}` has positive weight but no frame pairs")]
    EmptyDataset(String),
    #[error("invalid speed {0}: speeds must be finite and non-negative")]
    InvalidSpeed(f64),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("incompatible metric configurations")]
    ConfigMismatch,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("misaligned extension on axis {axis}: shift {shift} m is not a multiple of voxel size {voxel} m")]
    MisalignedExtension { axis: usize, shift: f64, voxel: f64 },
    #[error("new range on axis {axis} does not contain the old range")]
    NotAnExtension { axis: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidPose(_) => "invalid_pose",
            Error::MalformedAnnotations(_) => "malformed_annotations",
            Error::InvalidScene(_) => "invalid_scene",
            Error::InvalidConfig(_) => "invalid_config",
            Error::EmptyInput(_) => "empty_input",
            Error::IncompatibleRate { .. } => "incompatible_rate",
            Error::ManifestMismatch(_) => "manifest_mismatch",
            Error::UnmappedClass { .. } => "unmapped_class",
            Error::Format { .. } => "format",
            Error::InvalidWeights(_) => "invalid_weights",
            Error::UnknownDataset(_) => "unknown_dataset",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::InvalidSpeed(_) => "invalid_speed",
            Error::Shape { .. } => "shape",
            Error::ConfigMismatch => "config_mismatch",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::MisalignedExtension { .. } => "misaligned_extension",
            Error::NotAnExtension { .. } => "not_an_extension",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: usize, actual: usize) -> Self {
        Error::Shape { expected, actual }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
