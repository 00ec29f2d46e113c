use thiserror::Error;

/// Errors raised anywhere in the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("invalid array geometry: {0}")]
    InvalidGeometry(String),

    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),

    #[error("{rays} rays but {gains} path gains")]
    RayGainMismatch { rays: usize, gains: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("channel matrix has a non-finite entry")]
    NonFiniteChannel,

    #[error("invalid link budget: {0}")]
    InvalidBudget(String),

    #[error("direction list is empty")]
    EmptyDirections,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("action index {index} out of range for agent {agent} ({size} choices)")]
    ActionOutOfRange {
        agent: usize,
        index: usize,
        size: usize,
    },

    #[error("{0}")]
    Dataset(String),

    #[error("scenario file line {line}: {msg}")]
    Scenario { line: usize, msg: String },

    #[error("invalid risk configuration: {0}")]
    InvalidRisk(String),

    #[error("invalid network architecture: {0}")]
    InvalidArchitecture(String),

    #[error("action {action} has zero probability (outside numerical support)")]
    NumericalSupport { action: usize },

    #[error("forward cache does not match the parameters or architecture: {0}")]
    CacheMismatch(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at update {update}: parameter magnitude {magnitude:e}")]
    Diverged { update: usize, magnitude: f64 },

    #[error("game is not enumerable: {count} trajectories exceed the bound {bound}")]
    NotEnumerable { count: f64, bound: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
