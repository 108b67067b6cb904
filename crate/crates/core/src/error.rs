use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance is singular at {0}")]
    SingularPoint(String),

    #[error("quadrature did not converge: requested {requested:e}, achieved {achieved:e}")]
    Quadrature { requested: f64, achieved: f64 },

    #[error("spectral normalization mismatch {residual:e} (worst test width s = {worst_width})")]
    Normalization { residual: f64, worst_width: f64 },

    #[error("spectral measure fails ∫(1+|ξ|²)⁻¹μ(dξ) < ∞: {0}")]
    NotIntegrable(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical instability at step {step}{}", path.map(|p| format!(" on path {p}")).unwrap_or_default())]
    Instability { step: usize, path: Option<u64> },

    #[error("trajectory was not stored; solve with `store = true`")]
    TrajectoryNotStored,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate sample axis {0}: zero spread")]
    DegenerateAxis(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Tags an instability error with the path that produced it.
    pub fn on_path(self, path: u64) -> Self {
        match self {
            Error::Instability { step, .. } => Error::Instability { step, path: Some(path) },
            other => other,
        }
    }
}
