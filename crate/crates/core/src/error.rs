use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("coefficients are not stationary (spectral radius {0} >= 1)")]
    NonStationary(f64),

    #[error("companion matrix is nilpotent (spectral radius {0:e})")]
    NilpotentCompanion(f64),

    #[error("dominant eigenvalue is not isolated (modulus gap {0:e})")]
    DegenerateSpectrum(f64),

    #[error("eigenvalue solver did not converge")]
    EigenNonConvergence,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("zero pattern of precision matrix does not match graph at ({0}, {1})")]
    ZeroPatternMismatch(usize, usize),

    #[error("G-Wishart block update failed: {0}")]
    GWishartConditioning(String),

    #[error("step-size adaptation failed: {0}")]
    AdaptationFailed(String),

    #[error("log density is not finite at the initial point")]
    NonFiniteInitialDensity,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NilpotentCompanion(_)
                | Error::DegenerateSpectrum(_)
                | Error::EigenNonConvergence
                | Error::NotPositiveDefinite(_)
                | Error::GWishartConditioning(_)
                | Error::AdaptationFailed(_)
                | Error::NonFiniteInitialDensity
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
