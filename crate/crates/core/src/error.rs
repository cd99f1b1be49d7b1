use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },

    #[error("matrix is numerically singular ({what}: {value:e} below cutoff {cutoff:e})")]
    NearSingular {
        what: &'static str,
        value: f64,
        cutoff: f64,
    },

    #[error("tensor is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid needs at least 4 samples per axis for third differences, got {0:?}")]
    GridTooSmall([usize; 3]),

    #[error("grids do not match")]
    GridMismatch,

    #[error("time {t} outside [0, {tau}]")]
    TimeOutOfRange { t: f64, tau: f64 },

    #[error("velocity is nonzero on boundary voxel {index}")]
    NonZeroBoundary { index: usize },

    #[error("trajectory from {start:?} left the domain at {position:?}")]
    LeftDomain { start: [f64; 3], position: [f64; 3] },

    #[error("picard iteration did not converge after {iterations} iterations (last distance {distance:e})")]
    NoConvergence { iterations: usize, distance: f64 },

    #[error("jacobian determinant {det:e} is not positive at voxel {voxel}")]
    NonPositiveJacobian { voxel: usize, det: f64 },

    #[error("invalid parameters: {0}")]
    BadParams(String),

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("bad magic: expected {expected}, found {found}")]
    BadMagic {
        expected: &'static str,
        found: String,
    },

    #[error("bad header: {0}")]
    BadHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("voxel {index} is not SPD (smallest eigenvalue {min_eigenvalue:e})")]
    NotSpd { index: usize, min_eigenvalue: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonSymmetric { .. } => "NonSymmetric",
            Error::NearSingular { .. } => "NearSingular",
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::NonFinite(_) => "NonFinite",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::GridTooSmall(_) => "GridTooSmall",
            Error::GridMismatch => "GridMismatch",
            Error::TimeOutOfRange { .. } => "TimeOutOfRange",
            Error::NonZeroBoundary { .. } => "NonZeroBoundary",
            Error::LeftDomain { .. } => "LeftDomain",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::NonPositiveJacobian { .. } => "NonPositiveJacobian",
            Error::BadParams(_) => "BadParams",
            Error::BadConfig(_) => "BadConfig",
            Error::BadMagic { .. } => "BadMagic",
            Error::BadHeader(_) => "BadHeader",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::NotSpd { .. } => "NotSpd",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
