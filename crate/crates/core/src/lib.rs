//! Beam tracking for analog mmWave links: array model, channels, measurement
//! statistics, the stochastic-control tracker, the adaptive tracking protocol,
//! its analysis and the experiment harness.

pub mod analysis;
pub mod array;
pub mod atsc;
pub mod channel;
pub mod error;
pub mod harness;
pub mod measurement;
pub mod sc_tracker;

pub use error::{AtscError, Result};
