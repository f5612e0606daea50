use thiserror::Error;

use crate::solver::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("ball around {center:?} with radius {radius} has no member sites")]
    EmptyBall { center: [i64; 3], radius: f64 },
    #[error("cutoff of radius {radius} does not fit the grid ({reason})")]
    CutoffTooLarge { radius: f64, reason: String },
    #[error("ellipticity violation: {0}")]
    EllipticityViolation(String),
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("right-hand side is not compatible with the periodic kernel (sum = {sum:e})")]
    NonCompatibleRhs { sum: f64 },
    #[error("solver did not reach tolerance after {} iterations (residual {:e})", .best.1.iterations, .best.1.relative_residual)]
    MaxIterExceeded {
        best: Box<(crate::lattice::ScalarField, SolveReport)>,
    },
    #[error("flux is not divergence free: |div q| = {div_norm:e} exceeds {threshold:e}")]
    PreconditionDiv { div_norm: f64, threshold: f64 },
    #[error("radius {radius} exceeds the admissible maximum {max}")]
    RadiusTooLarge { radius: f64, max: f64 },
    #[error("ball around {center:?} with radius {radius} leaves the sample domain")]
    BallOutsideDomain { center: [i64; 3], radius: f64 },
    #[error("geometric precondition violated: {0}")]
    PreconditionGeometry(String),
    #[error("growth precondition violated: {0}")]
    PreconditionGrowth(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable, machine readable code of the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "INVALID_GRID",
            Error::EmptyBall { .. } => "EMPTY_BALL",
            Error::CutoffTooLarge { .. } => "CUTOFF_TOO_LARGE",
            Error::EllipticityViolation(_) => "ELLIPTICITY_VIOLATION",
            Error::InvalidEnsemble(_) => "INVALID_ENSEMBLE",
            Error::GridMismatch(_) => "GRID_MISMATCH",
            Error::NonCompatibleRhs { .. } => "NON_COMPATIBLE_RHS",
            Error::MaxIterExceeded { .. } => "MAX_ITER_EXCEEDED",
            Error::PreconditionDiv { .. } => "PRECONDITION_DIV",
            Error::RadiusTooLarge { .. } => "RADIUS_TOO_LARGE",
            Error::BallOutsideDomain { .. } => "BALL_OUTSIDE_DOMAIN",
            Error::PreconditionGeometry(_) => "PRECONDITION_GEOMETRY",
            Error::PreconditionGrowth(_) => "PRECONDITION_GROWTH",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::Dump(_) => "DUMP",
            Error::Io(_) => "IO",
        }
    }

    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::PreconditionGeometry(_)
                | Error::PreconditionGrowth(_)
                | Error::PreconditionDiv { .. }
                | Error::RadiusTooLarge { .. }
                | Error::BallOutsideDomain { .. }
                | Error::CutoffTooLarge { .. }
                | Error::EmptyBall { .. }
        )
    }

    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::MaxIterExceeded { .. } | Error::NonCompatibleRhs { .. })
    }
}
