//! Ready-made scenarios: one-sided tracking on a constant path, two-sided
//! tracking under Rician fading, and the synthetic urban route.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::array::ArrayConfig;
use crate::atsc::AtscParams;
use crate::channel::{AngularMotion, ArrayPair, MobilityModel, TrajectoryData};
use crate::error::Result;
use crate::harness::experiment::ScenarioSpec;
use crate::harness::trajectory::{trajectory_model, SLOT_DURATION_S};

/// Pilot length used throughout the experiments.
pub const PILOT_LENGTH: usize = 16;

/// Symbols per slot: one two-sided tracking slot's worth of pilots.
pub fn default_symbols_per_slot(pilot_length: usize) -> f64 {
    (4 * pilot_length) as f64
}

/// BS with `N_T = 64`, single-antenna UE, constant path at `γ = −10 dB` whose
/// BS angle moves by `speed_over_b·B` per slot, tracked every `fixed_tf` slots.
pub fn one_sided(speed_over_b: f64, fixed_tf: u32, num_slots: u64, num_trials: usize, seed: u64) -> Result<ScenarioSpec> {
    let arrays = ArrayPair::new(ArrayConfig::new(64)?, ArrayConfig::new(1)?);
    let b = arrays.bs.half_beam_width();
    let mut atsc = AtscParams::recommended(&arrays, PILOT_LENGTH);
    atsc.fixed_tf = Some(fixed_tf);
    // No realignment in this experiment: the SC updates are tested on their own.
    atsc.zeta_db = f64::INFINITY;
    Ok(ScenarioSpec {
        name: format!("one_sided_c{speed_over_b}"),
        mobility: MobilityModel::FixedSinglePath {
            snr_db: -10.0,
            motion: AngularMotion { bs_start: -0.5, ue_start: 0.0, bs_rate: speed_over_b * b, ue_rate: 0.0 },
        },
        arrays,
        atsc,
        num_slots,
        num_trials,
        seed,
        symbols_per_slot: default_symbols_per_slot(PILOT_LENGTH),
        codebook_baseline: false,
        keep_traces: 1,
    })
}

/// Rate source for the two-sided experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    /// Estimated from the tracked beams.
    Estimated,
    /// `t_f = ⌊β/c⌋` from the true angular speed.
    Genie,
}

/// `N_T = N_R = 32`, mean SNR −20 dB, Rician K-factor `k_db`, both angles
/// moving by `0.05B` per slot, `β = beta_over_b·B` on both sides.
pub fn two_sided(k_db: f64, beta_over_b: f64, rate: RateSource, num_slots: u64, num_trials: usize, seed: u64) -> Result<ScenarioSpec> {
    let arrays = ArrayPair::new(ArrayConfig::new(32)?, ArrayConfig::new(32)?);
    let b = arrays.bs.half_beam_width();
    let speed = 0.05 * b;
    let mut atsc = AtscParams::recommended(&arrays, PILOT_LENGTH);
    atsc.beta_bs = beta_over_b * b;
    atsc.beta_ue = beta_over_b * b;
    if rate == RateSource::Genie {
        atsc.fixed_tf = Some(atsc.genie_interval(speed, speed));
    }
    Ok(ScenarioSpec {
        name: format!("two_sided_k{k_db}_beta{beta_over_b}_{rate:?}").to_lowercase(),
        mobility: MobilityModel::RicianPath {
            k_factor_db: k_db,
            mean_snr_db: -20.0,
            motion: AngularMotion { bs_start: -0.75, ue_start: 0.75, bs_rate: speed, ue_rate: -speed },
        },
        arrays,
        atsc,
        num_slots,
        num_trials,
        seed,
        symbols_per_slot: default_symbols_per_slot(PILOT_LENGTH),
        codebook_baseline: false,
        keep_traces: 1,
    })
}

/// Interval cap for the route scenario; slow walkers need thousands of slots
/// between updates.
pub const ROUTE_TF_CAP: u32 = 20_000;

/// `N_T = N_R = 32`, `β = 0.5B`, `ζ = 6 dB`, `T_f = 10`, `n = 16`, 0.5 ms slots,
/// over the whole route at `speed_kmh`.
pub fn route(data: Arc<TrajectoryData>, speed_kmh: f64, num_trials: usize, seed: u64) -> Result<ScenarioSpec> {
    let arrays = ArrayPair::new(ArrayConfig::new(32)?, ArrayConfig::new(32)?);
    let mut atsc = AtscParams::recommended(&arrays, PILOT_LENGTH);
    atsc.tf_cap = ROUTE_TF_CAP;
    let mobility = trajectory_model(data, speed_kmh, SLOT_DURATION_S);
    let num_slots = mobility.horizon_slots().unwrap_or(1);
    Ok(ScenarioSpec {
        name: format!("route_{speed_kmh}kmh"),
        mobility,
        arrays,
        atsc,
        num_slots,
        num_trials,
        seed,
        symbols_per_slot: default_symbols_per_slot(PILOT_LENGTH),
        codebook_baseline: false,
        keep_traces: 1,
    })
}
