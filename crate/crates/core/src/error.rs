use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlocError>;

#[derive(Debug, Error)]
pub enum FlocError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("point {x} lies outside the size domain [0, {xbar}]")]
    OutOfDomain { x: f64, xbar: f64 },
    #[error("expected a nodal vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry in state vector")]
    NonFinite,
    #[error("renewal integral of q_shape * u vanishes, C_q is undefined")]
    DegenerateRenewal,
    #[error("total number density is zero")]
    EmptyDistribution,
    #[error("steady state did not converge")]
    NotConverged,
    #[error("time integration blew up at t = {time}")]
    BlowUp { time: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl FlocError {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            FlocError::InvalidParameter(_)
                | FlocError::OutOfDomain { .. }
                | FlocError::DimensionMismatch { .. }
                | FlocError::Io(_)
                | FlocError::Json(_)
                | FlocError::Csv(_)
        )
    }
}
