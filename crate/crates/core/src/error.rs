use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("reaction {index}: {reason}")]
    InvalidReaction { index: usize, reason: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("not a separation kernel")]
    NotSeparationKernel,

    #[error("kernel wider than domain: {0}")]
    KernelTooWide(String),

    #[error("grid size {0} is not a power of two")]
    GridNotPowerOfTwo(usize),

    #[error("non-finite field value at step {step}")]
    NonFinite { step: u64 },

    #[error("grid or save-time mismatch: {0}")]
    Mismatch(String),

    #[error("insufficient points for a slope fit: need at least 3, got {0}")]
    InsufficientPoints(usize),

    #[error("event queue corrupted: next event at {next} precedes clock {clock}")]
    QueueCorrupted { next: f64, clock: f64 },

    #[error("negative discriminant {0} in equilibrium formula")]
    NegativeDiscriminant(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
