use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("unsupported stage count {stages}: Radau IIA tableaux are provided for 1..=9 stages")]
    UnsupportedStageCount { stages: usize },

    #[error("factorization failed: zero pivot at index {index}")]
    ZeroPivot { index: usize },

    #[error("degenerate spectrum: diagonal entries {first} and {second} coincide")]
    DegenerateSpectrum { first: usize, second: usize },

    #[error("eigenvalue iteration did not converge within {iterations} sweeps")]
    SpectralFailure { iterations: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid configuration for `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("numerical failure in {context}")]
    NumericalFailure { context: String },

    #[error("spectral estimate is not a positive finite number: {value}")]
    SpectralEstimate { value: f64 },

    #[error("collective contract violated: {reason}")]
    Collective { reason: String },

    #[error("protocol error: {reason} (ranks {ranks:?})")]
    Protocol { reason: String, ranks: Vec<usize> },

    #[error("operation requires the row-major padded topology")]
    UnsupportedTopology,

    #[error("time step {step} failed: GMRES stopped after {iterations} iterations at relative residual {reduction:e}")]
    StepFailure { step: usize, iterations: usize, reduction: f64 },

    #[error("block solve for eigenvalue pair {pair} failed: {reason}")]
    BlockSolve { pair: usize, reason: String },

    #[error("performance-model validation failed: {}", mismatches.join("; "))]
    Validation { mismatches: Vec<String> },
}

pub type Result<T, E = SolverError> = std::result::Result<T, E>;
