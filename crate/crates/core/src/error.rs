use thiserror::Error;

/// Errors produced anywhere in the optimizer.
#[derive(Debug, Error)]
pub enum PdError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("KL divergence undefined: p2 is zero at index {index} where p1 = {mass}")]
    KlUndefined { index: usize, mass: f64 },

    #[error("joint space of size {size} exceeds oracle guard {guard}")]
    GuardExceeded { size: String, guard: usize },

    #[error("agent {agent} has no positive probability mass to renormalize")]
    NoPositiveMass { agent: usize },

    #[error("step collapsed after {attempts} backtracks")]
    StepCollapse { attempts: usize },

    #[error("constraint gradients are linearly dependent")]
    DegenerateConstraints,

    #[error("no estimate available for agent {agent}, move {mv}")]
    EstimatorUnavailable { agent: usize, mv: usize },

    #[error("no samples cover agent {agent}, move {mv}")]
    NoCoverage { agent: usize, mv: usize },

    #[error("block {got} arrived after block {last}")]
    OutOfOrderBlock { last: u64, got: u64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no probability mass below threshold {threshold}")]
    EmptyTruncation { threshold: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("map for agent {agent} is not a permutation")]
    NonPermutation { agent: usize },

    #[error("unknown problem generator `{0}`")]
    UnknownGenerator(String),

    #[error("utility evaluation failed: {0}")]
    UtilityEvaluation(String),

    #[error("block aborted after {completed} of {requested} samples: {reason}")]
    PartialBlock {
        completed: usize,
        requested: usize,
        reason: String,
    },

    #[error("beta may not decrease (current {current}, requested {requested})")]
    BetaDecrease { current: f64, requested: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PdError>;
