use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error(
        "tree of depth {j} with {n_h} spatial dofs needs {required} bytes per field, \
         budget is {budget} bytes"
    )]
    MemoryBudget {
        j: usize,
        n_h: usize,
        required: u64,
        budget: u64,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported fractional order beta = {0}; supported values are -1, 0, 1, 2")]
    UnsupportedBeta(i32),

    #[error("semigroup time must be nonnegative, got {0}")]
    NegativeTime(f64),

    #[error("quadrature order {0} not supported (need 2..=5)")]
    QuadratureOrder(usize),

    #[error("direct solve residual {residual:.3e} exceeds {tolerance:.3e}")]
    SolveResidual { residual: f64, tolerance: f64 },

    #[error("meshes not nested: coarse n_elems {coarse} does not divide fine n_elems {fine}")]
    NonNested { coarse: usize, fine: usize },

    #[error("factor {factor} does not divide step count {steps}")]
    NonDivisor { factor: usize, steps: usize },

    #[error("non-finite increment at path {path}, step {step}")]
    NonFinite { path: usize, step: usize },

    #[error("regression design rank deficient at step {step} (condition number {condition:.3e})")]
    RankDeficient { step: usize, condition: f64 },

    #[error("optimizer diverged after {iterations} iterations (cost increased at minimal step)")]
    Divergence {
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("invalid bounds: lower {lower} must be strictly below upper {upper}")]
    InvalidBounds { lower: f64, upper: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
