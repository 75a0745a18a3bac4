use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e}, scale {scale:.3e})")]
    NonHermitianInput { asymmetry: f64, scale: f64 },

    #[error("spiral parameter t = {0} outside [-1, 1]")]
    OutOfRange(f64),

    #[error("doublet tracking failed: {0}")]
    DegenerateLevels(String),

    #[error("levels {lower} and {upper} are within {tolerance_khz} kHz of a neighbour (gap {gap_khz:.4} kHz)")]
    Degeneracy {
        lower: usize,
        upper: usize,
        gap_khz: f64,
        tolerance_khz: f64,
    },

    #[error("Newton iteration found no zero: {0}")]
    NoZero(String),

    #[error("curvature tensor is singular (smallest |eigenvalue| {0:.3e} Hz/G^2)")]
    SingularCurvature(f64),

    #[error("dataset contains no peaks")]
    EmptyDataset,

    #[error("Jacobian is rank deficient; null direction {null_direction:?}")]
    SingularJacobian { null_direction: Vec<(String, f64)> },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("decay trace does not decay")]
    DegenerateTrace,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
