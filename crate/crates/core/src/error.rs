use thiserror::Error;

/// Failures raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("interaction matrix is not symmetric: C[{i}][{j}] = {cij} but C[{j}][{i}] = {cji}")]
    NonSymmetricInteraction { i: usize, j: usize, cij: f64, cji: f64 },
    #[error("gamma = {0} lies outside [-2, 1]")]
    GammaOutOfRange(f64),
    #[error("{what} must be positive and finite, got {value}")]
    NonPositiveParameter { what: String, value: f64 },
    #[error("species {species} has vanishing quadrature mass")]
    ZeroMass { species: usize },
    #[error("relative velocity vanishes; coincident pairs must be excised")]
    ZeroRelativeVelocity,
    #[error("density of species {species} is not positive at node {node} (value {value})")]
    NonPositiveDensity { species: usize, node: usize, value: f64 },
    #[error("{kind} kernel basis is rank deficient: rank {rank} < {expected}")]
    RankDeficient { kind: String, rank: usize, expected: usize },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    SolverNoConvergence { what: String, iterations: usize, residual: f64 },
    #[error("restricted smallest eigenvalue {value:e} is negative beyond tolerance; kernel basis does not span the nullspace")]
    KernelMismatch { value: f64 },
    #[error("step unstable: norm grew by a factor {growth:.3e}")]
    StepUnstable { growth: f64 },
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
    #[error("no exponential decay window: {0}")]
    NoExponentialWindow(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
