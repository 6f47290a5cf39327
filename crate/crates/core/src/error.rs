use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gated outcome score requires a scalar causal feature (d_c = {0})")]
    GatedNeedsScalar(usize),
    #[error("contract violation: {0}")]
    Contract(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("population is empty")]
    EmptyPopulation,
    #[error("decision boundary unreachable: rule has a zero weight vector")]
    ZeroWeight,
    #[error("causal weight is zero, ambiguity region is unbounded")]
    DegenerateCausalWeight,
    #[error("estimators belong to different families")]
    FamilyMismatch,
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
    #[error("grid has no cells")]
    EmptyGrid,
    #[error("logistic fit diverged after {retries} learning-rate halvings")]
    Diverged { retries: u32 },
    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
}
