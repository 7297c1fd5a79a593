use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh resolution must be at least 1, got {0}")]
    InvalidResolution(usize),

    #[error("element index {index} out of range (mesh has {count} elements)")]
    ElementOutOfRange { index: usize, count: usize },

    #[error("vertex index {index} out of range (mesh has {count} vertices)")]
    VertexOutOfRange { index: usize, count: usize },

    #[error("degenerate triangle (signed area {area:e})")]
    DegenerateTriangle { area: f64 },

    #[error("zero-length segment")]
    ZeroLengthSegment,

    #[error("non-positive diffusivity {value:e} in element {element}")]
    NonPositiveDiffusivity { element: usize, value: f64 },

    #[error("nodal field has {got} values, mesh has {expected} vertices")]
    FieldLength { expected: usize, got: usize },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("local system of element {element} is incompatible: sum of right-hand side {sum:e} (scale {scale:e})")]
    IncompatibleLocalSystem { element: usize, sum: f64, scale: f64 },

    #[error("reduced local system of element {element} is singular")]
    SingularLocalSystem { element: usize },

    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),

    #[error("transient data required for a time-dependent problem")]
    MissingTransientData,

    #[error("Gummel iteration did not converge after {iterations} iterations (last increment {increment:e})")]
    GummelDiverged { iterations: usize, increment: f64 },

    #[error("error values must be positive, got {value:e} at row {row}")]
    NonPositiveError { row: usize, value: f64 },

    #[error("convergence table needs at least 2 rows, got {0}")]
    TooFewRows(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
