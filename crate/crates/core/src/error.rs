use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not Hermitian (relative asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not unitary (|Q*Q - I|_F = {0:.3e})")]
    NotUnitary(f64),

    /// The dictionary is numerically rank-deficient on the supplied data.
    #[error("ill-conditioned Gram matrix: smallest eigenvalue {min:.3e} vs largest {max:.3e} (rtol {rtol:.1e})")]
    IllConditionedGram { min: f64, max: f64, rtol: f64 },

    #[error("eigenvector matrix is singular or numerically unreliable (cond {0:.3e})")]
    SingularEigenvectors(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("trajectory too short: need at least {needed} states, have {have}")]
    TooShort { needed: usize, have: usize },

    #[error("observable has zero norm in the Gram inner product")]
    ZeroObservable,

    #[error("operation requires a measure-preserving model, got method {0}")]
    WrongMethod(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("linear algebra backend failure: {0}")]
    Backend(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures map to exit status 2 in the CLI; everything else is a
    /// usage or input problem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::NotHermitian(_)
                | Error::NotUnitary(_)
                | Error::IllConditionedGram { .. }
                | Error::SingularEigenvectors(_)
                | Error::ZeroObservable
                | Error::Backend(_)
        )
    }
}
