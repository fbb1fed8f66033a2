use std::path::PathBuf;

use crate::grid::Shape;

/// Result alias used across the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// [`Error::code`] gives a stable, machine-parseable identifier used by the
/// CLI and by array-level callers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Shape, right: Shape },

    #[error("connectivity {0} is not defined for rank-{1} grids")]
    InvalidConnectivity(&'static str, usize),

    #[error("mask has no foreground voxel")]
    EmptyMask,

    #[error("query endpoint set is empty")]
    EmptyQuery,

    #[error("voxel ({z}, {y}, {x}) lies outside grid {shape:?}")]
    OutOfBounds { z: i64, y: i64, x: i64, shape: Shape },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("prediction contains label {0} which is not in the configured class list")]
    LabelMismatch(u32),

    #[error("label {label} out of range for {channels} channels")]
    LabelOutOfRange { label: u32, channels: usize },

    #[error("averaging support is empty")]
    EmptySupport,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("loss component `{name}` is negative ({value})")]
    NegativeLoss { name: &'static str, value: f64 },

    #[error("tube network spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("invalid cut: {0}")]
    InvalidCut(String),

    #[error("unsupported datatype: {0}")]
    UnsupportedDatatype(String),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("dimensionality mismatch: {0}")]
    DimensionalityMismatch(String),

    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },

    #[error("unsupported file extension: {0}")]
    UnsupportedExtension(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier, e.g. `"ShapeMismatch"`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::InvalidConnectivity(..) => "InvalidConnectivity",
            Error::EmptyMask => "EmptyMask",
            Error::EmptyQuery => "EmptyQuery",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::LabelMismatch(_) => "LabelMismatch",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::EmptySupport => "EmptySupport",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NegativeLoss { .. } => "NegativeLoss",
            Error::SpecInfeasible(_) => "SpecInfeasible",
            Error::InvalidCut(_) => "InvalidCut",
            Error::UnsupportedDatatype(_) => "UnsupportedDatatype",
            Error::CorruptHeader(_) => "CorruptHeader",
            Error::DimensionalityMismatch(_) => "DimensionalityMismatch",
            Error::SchemaViolation { .. } => "SchemaViolation",
            Error::UnsupportedExtension(_) => "UnsupportedExtension",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn shape_mismatch(left: Shape, right: Shape) -> Self {
        Error::ShapeMismatch { left, right }
    }
}
