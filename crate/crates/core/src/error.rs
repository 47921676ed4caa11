use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid measurement: depth {0} mm is not positive")]
    InvalidMeasurement(f64),
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("invalid camera intrinsics")]
    InvalidIntrinsics,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("object center is behind the camera (z = {0} mm)")]
    BehindCamera(f64),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContractError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("window size {0} outside the supported range [16, 100]")]
    WindowSize(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferError {
    #[error("no evidence: the object probability map has no mass on pixels with depth")]
    NoEvidence,
    #[error("could not form a non-degenerate hypothesis after {0} attempts")]
    HypothesisFailure(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcclusionError {
    #[error("target object covers no pixels; occlusion is undefined")]
    Undefined,
}

/// Errors raised while reading or writing persisted artifacts.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("corrupt raster file {path}: {reason}")]
    CorruptRaster { path: PathBuf, reason: String },
    #[error("malformed {what} at {path}: {reason}")]
    Malformed {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(
        what: &'static str,
        path: impl Into<PathBuf>,
        reason: impl Into<String>,
    ) -> Self {
        IoError::Malformed {
            what,
            path: path.into(),
            reason: reason.into(),
        }
    }
}

/// Why a training sample contributed no gradient.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkipReason {
    #[error("chain initialization failed: {0}")]
    Inference(#[from] InferError),
    #[error("ground-truth pose is behind the camera")]
    GroundTruthBehindCamera,
    #[error("no chain sample could be rendered")]
    NoRenderableSamples,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("invalid value {value:?} for {key}")]
    InvalidValue { key: String, value: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
}
