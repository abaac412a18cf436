use thiserror::Error;

pub type Result<T, E = AtscError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AtscError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sin-domain angle {0} outside [-1, 1]")]
    AngleOutOfRange(f64),

    #[error("reference SNR must be positive, got {0}")]
    InvalidReference(f64),

    /// The mobility model has no channel for the requested slot (trajectory
    /// exhausted or a path angle left the sin-domain).
    #[error("channel ended at slot {slot}")]
    ChannelEnded { slot: u64 },

    #[error("no path with finite gain at slot {slot}")]
    NoPath { slot: u64 },

    #[error("no pilot length up to {max} meets the loss-of-track target")]
    Infeasible { max: usize },

    #[error("trajectory: {0}")]
    Trajectory(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
