use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HgsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HgsError {
    #[error("primitive culled: camera-space depth {depth} is not beyond the near plane")]
    CulledBehindCamera { depth: f64 },

    #[error("degenerate ray-space frame (condition number {condition:e})")]
    DegenerateFrame { condition: f64 },

    #[error("adaptive quadrature did not reach tolerance {tolerance:e} within {levels} refinement levels")]
    QuadratureNonConvergence { tolerance: f64, levels: u32 },

    #[error("scene contains no primitives")]
    EmptyScene,

    #[error("image of {width}x{height} pixels is too large")]
    ImageTooLarge { width: u32, height: u32 },

    #[error("image of {width}x{height} pixels is smaller than the {min}x{min} SSIM window")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("backward pass does not match the forward render: {0}")]
    MismatchedForward(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u32 },

    #[error("point cloud is empty")]
    EmptyPointCloud,

    #[error("invalid primitive {index}: {reason}")]
    InvalidPrimitive { index: usize, reason: String },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed point file header: {0}")]
    MalformedHeader(String),

    #[error("point file is missing required property `{0}`")]
    MissingProperty(String),

    #[error("point file payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unsupported camera model `{0}` (only PINHOLE and SIMPLE_PINHOLE)")]
    UnsupportedCameraModel(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("could not decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("unsupported PNG bit depth {0} (only 8-bit images are supported)")]
    UnsupportedBitDepth(u8),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HgsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HgsError::Io {
            path: path.into(),
            source,
        }
    }
}
