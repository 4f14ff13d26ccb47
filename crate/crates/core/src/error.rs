use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension {0}: only 1 and 2 are supported")]
    InvalidDimension(usize),
    #[error("cells per dimension must be even and >= 8, got {0}")]
    OddCells(usize),
    #[error("period must be positive and finite, got {0}")]
    NonpositivePeriod(f64),
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value in field")]
    NonFinite,
    #[error("invalid norm exponent p = {0} (need p >= 1)")]
    InvalidExponent(f64),
    #[error("negative density {value} in species {species}")]
    NegativeDensity { species: usize, value: f64 },
    #[error("reference density must be strictly positive (species {species}, value {value})")]
    NonpositiveReference { species: usize, value: f64 },
    #[error("species count mismatch: expected {expected}, got {got}")]
    SpeciesMismatch { expected: usize, got: usize },

    #[error("invalid kernel parameter: {0}")]
    InvalidKernel(String),
    #[error("mollifier profile normalization failed: integral = {0}")]
    ProfileNormalization(f64),
    #[error("interaction matrix entry a[{i}][{j}] = {value} is invalid")]
    InvalidInteraction { i: usize, j: usize, value: f64 },
    #[error("structural asymmetry: a[{i}][{j}] > 0 but a[{j}][{i}] = 0")]
    StructuralAsymmetry { i: usize, j: usize },
    #[error("no reversible measure: cycle inconsistency on edge ({i}, {j}), residual {residual:e}")]
    NoReversibleMeasure { i: usize, j: usize, residual: f64 },
    #[error("invalid reversible measure: {0}")]
    InvalidMeasure(String),
    #[error("detailed balance violated: residual {residual:e} exceeds tolerance {tol:e}")]
    DetailedBalanceViolated { residual: f64, tol: f64 },
    #[error("kernel is not smooth enough: {0}")]
    KernelNotSmooth(String),
    #[error("direct convolution size guard exceeded ({cells} cells); pass an override to force it")]
    SizeGuard { cells: usize },

    #[error("interaction matrix times pi is not symmetric (residual {0:e})")]
    AsymmetricWeights(f64),
    #[error("mass mismatch in species {species}: {left} vs {right}")]
    MassMismatch { species: usize, left: f64, right: f64 },

    #[error("entropy variable overflow: w/pi = {0} exceeds 700")]
    EntropyVariableOverflow(f64),
    #[error("newton iteration diverged: residual {residual:e} after {iterations} iterations")]
    NewtonDivergence { residual: f64, iterations: usize },
    #[error("CFL violation: tau = {tau:e} exceeds limit {limit:e}")]
    CflViolation { tau: f64, limit: f64 },
    #[error("invalid scheme configuration: {0}")]
    InvalidScheme(String),

    #[error("resolution guard: epsilon {epsilon} is below 4h = {min}")]
    ResolutionGuard { epsilon: f64, min: f64 },
    #[error("insufficient resolutions: {0}")]
    InsufficientResolutions(String),

    #[error("io error: {0}")]
    Io(String),
    #[error("bad snapshot magic")]
    BadMagic,
    #[error("unsupported snapshot: {0}")]
    BadHeader(String),
    #[error("truncated snapshot payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("non-finite value in snapshot")]
    NonFiniteSnapshot,
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("config invalid:\n  {}", .0.join("\n  "))]
    ConfigInvalid(Vec<String>),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
