use alloc::string::String;
use alloc::vec::Vec;

/// Every failure the core can report.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("hypothesis H1 violated: {quantity} = {value} must be positive")]
    H1Violation { quantity: &'static str, value: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("rank mismatch: {0}")]
    RankMismatch(&'static str),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown system kind: {0}")]
    UnknownSystem(String),
    #[error("weight construction failed: {reason}; minimum feasible size {min_feasible}")]
    ConstructionFailure { reason: String, min_feasible: f64 },
    #[error("time {t} outside [0, {horizon})")]
    OutOfDomain { t: f64, horizon: f64 },
    #[error("conjugate gradient did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize, residuals: Vec<f64> },
    #[error("Picard iteration is not contracting")]
    PicardDivergence { factors: Vec<f64> },
    #[error("iterate left the ball of radius {radius} (distance {norm})")]
    BallExit { radius: f64, norm: f64 },
    #[error("density perturbation left the admissible neighborhood: max |rho* a| = {max_rho_a}")]
    NeighborhoodExceeded { max_rho_a: f64 },
    #[error("time step {step} produced a non-finite state")]
    StepRejected { step: usize },
    #[error("Re(zeta) = {0} must be positive")]
    InvalidZeta(f64),
    #[error("eigenvalue iteration stalled at residual {residual}")]
    IterationStall { residual: f64 },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::PicardDivergence { .. }
                | Error::BallExit { .. }
                | Error::NeighborhoodExceeded { .. }
                | Error::StepRejected { .. }
                | Error::IterationStall { .. }
                | Error::ConstructionFailure { .. }
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
