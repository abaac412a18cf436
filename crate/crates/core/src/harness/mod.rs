//! Experiment orchestration: scenarios, metrics, trajectory synthesis and
//! output files.

pub mod experiment;
pub mod metrics;
pub mod scenarios;
pub mod snr;
pub mod trajectory;
