use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid polytope: {0}")]
    InvalidPolytope(String),

    #[error("invalid channel partition: {0}")]
    InvalidPartition(String),

    #[error("affine closure violated: {0}")]
    AffineClosure(String),

    #[error("point {point:?} lies outside the declared region")]
    OutsideRegion { point: Vec<f64> },

    #[error("template is not affine in the scheduling variable (probe residual {residual:.3e})")]
    NonAffineTemplate { residual: f64 },

    #[error("constraint matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    AsymmetricConstraint { asymmetry: f64 },

    #[error("semidefinite program is infeasible: {0}")]
    Infeasible(String),

    #[error("semidefinite solver failed: {0}")]
    NumericalFailure(String),

    #[error("factor R is singular (condition number {cond:.3e})")]
    SingularFactor { cond: f64 },

    #[error("block inverse failed: {0}")]
    BlockInverse(&'static str),

    #[error("plant violates the generalized plant structure: {0}")]
    PlantStructure(String),

    #[error("algebraic loop: plant u->y feedthrough meets controller feedthrough")]
    AlgebraicLoop,

    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:.3e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("trajectory exhausted at step {step} (horizon {horizon})")]
    HorizonExhausted { step: usize, horizon: usize },

    #[error("reference too short: need {needed} samples, got {got}")]
    HorizonTooShort { needed: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("steady-state trajectory violates the plant equations at step {step} (residual {residual:.3e})")]
    InfeasibleTrajectory { step: usize, residual: f64 },

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
