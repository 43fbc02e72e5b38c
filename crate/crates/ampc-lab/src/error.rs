use thiserror::Error;

/// Errors surfaced by the model, solver, and simulation layers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("nonzero ground reaction force on swing foot {0}")]
    ForceOnSwingFoot(usize),
    #[error("inertia matrix is singular or not positive definite")]
    SingularInertia,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("rotation log undefined: angle at pi")]
    RotationLogAtPi,
    #[error("QP hessian is not symmetric positive definite")]
    IndefiniteHessian,
    #[error("QP bounds inconsistent: lb > ub in row {0}")]
    BadBounds(usize),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
