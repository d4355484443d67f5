use thiserror::Error;

/// Errors raised while building grids and fields.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 4 cells per direction, got {nx}x{ny}")]
    TooSmall { nx: usize, ny: usize },
    #[error("grid has {cells} cells, above the configured cap of {max}")]
    TooLarge { cells: usize, max: usize },
    #[error("domain lengths must be positive and finite, got lx={lx}, ly={ly}")]
    BadLength { lx: f64, ly: f64 },
    #[error("field has {got} values, grid expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field value at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("fields live on different grids")]
    GridMismatch,
}

/// Failures of the iterative linear solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("right-hand side must have zero mean, got mean {mean:.3e}")]
    NonZeroMean { mean: f64 },
    #[error("input is not a tangent field: {0}")]
    NotTangent(String),
    #[error("phase state violates its constraints: {0}")]
    Constraint(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// Invalid material parameters or out-of-domain evaluations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("logarithmic potential is undefined at s={s} for derivative order {order}")]
    Domain { s: f64, order: usize },
    #[error("derivative order {0} is not available (0..=4)")]
    Order(usize),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("the Lipschitz check requires a state-dependent mobility")]
    ConstantMobility,
}

/// Errors from a time step or a run.
#[derive(Debug, Error)]
pub enum StepError {
    #[error("time step fell below tau_min={tau_min:.3e} while the line search kept stalling")]
    TauUnderflow { tau_min: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}
