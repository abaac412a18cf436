//! The adaptive tracking protocol: per-slot scheduling of tracking updates,
//! the post-beamforming SNR reference, adaptive tracking interval and
//! realignment.
//!
//! Slot loop (initialisation `t_f = 1`, `c_f = 1`, initial alignment):
//!
//! 1. if the realignment flag is set, realign;
//! 2. else if `c_f ≥ t_f`, run a tracking slot (both sides measured with the
//!    previous beams, updates applied together), refresh `t_f` every
//!    `rate_window` updates and reset `c_f`;
//! 3. else increment `c_f`;
//! 4. evaluate `Γ(t)` with the current beams and raise the realignment flag if
//!    it fell more than `ζ` dB below the maximum over the slots from the
//!    latest earlier beam update to `t − 1`.
//!
//! Initial alignment and realignment are modelled as an oracle full search: the
//! beams land on the path with the largest mean power with a uniform error in `[-B, B]` per side.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{linear_to_db, ArrayPair, ChannelState, MobilityModel};
use crate::error::{AtscError, Result};
use crate::harness::snr::optimal_snr;
use crate::measurement::{sample_noncentral_chi2, sample_pair};
use crate::sc_tracker::{sampling_directions, update, BeamState, TrackerParams};

/// Smallest reference SNR handed to the drift normalisation.
pub const GAMMA_FLOOR: f64 = 1e-9;
/// Forgetting factor of the tracked SNR estimate.
pub const ESTIMATE_SMOOTHING: f64 = 0.9;

/// Where the post-beamforming SNR reference `Γ` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// Exact SNR of the data beams. The drift is normalised by the value on
    /// the current fading block; the realignment test uses the fading-averaged
    /// value (`Σ E|g_l|²·G_R·G_T`), so small-scale fades alone never trigger it.
    Genie,
    /// Exact SNR on the current fading block for both uses.
    GenieInstantaneous,
    /// Fading-averaged exact SNR for both uses.
    GenieMean,
    /// Exponentially smoothed noisy measurements on the data beams, for both uses.
    TrackedEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtscParams {
    pub bs: TrackerParams,
    pub ue: TrackerParams,
    /// Target angular change per tracking interval at the BS.
    pub beta_bs: f64,
    pub beta_ue: f64,
    /// Realignment threshold in dB.
    pub zeta_db: f64,
    /// Number of tracked angles per rate estimate (`T_f`).
    pub rate_window: usize,
    pub gamma_mode: GammaMode,
    /// Upper bound on `t_f`; also used when a side shows no angular change.
    pub tf_cap: u32,
    /// Bypasses rate adaptation with a constant interval.
    pub fixed_tf: Option<u32>,
    /// Pilot symbols charged per realignment.
    pub search_cost_symbols: f64,
    /// Initial alignment error bound as a multiple of `B` (1 = uniform on `[-B, B]`).
    pub initial_error_scale: f64,
}

impl AtscParams {
    /// Recommended tracker settings (`Δ = B`, `δ = B/4`), `β = 0.5B`, `ζ = 6 dB`,
    /// `T_f = 10`, genie reference, and a search cost of one pilot per DFT beam
    /// on each side.
    pub fn recommended(arrays: &ArrayPair, pilot_length: usize) -> Self {
        let pilot = crate::measurement::PilotConfig::new(pilot_length);
        let bs = TrackerParams::recommended(arrays.bs.half_beam_width(), pilot);
        let ue = TrackerParams::recommended(arrays.ue.half_beam_width(), pilot);
        Self {
            bs,
            ue,
            beta_bs: 0.5 * bs.half_beam,
            beta_ue: 0.5 * ue.half_beam,
            zeta_db: 6.0,
            rate_window: 10,
            gamma_mode: GammaMode::Genie,
            tf_cap: 100,
            fixed_tf: None,
            search_cost_symbols: ((arrays.bs.num_elements() + arrays.ue.num_elements()) * pilot_length) as f64,
            initial_error_scale: 1.0,
        }
    }

    /// `⌊β/c⌋` for a known per-slot angular speed `c` (the tighter side wins),
    /// at least 1 and at most the cap.
    pub fn genie_interval(&self, bs_rate: f64, ue_rate: f64) -> u32 {
        interval_from_rates(Some(bs_rate.abs()), Some(ue_rate.abs()), self)
    }

    pub fn validate(&self) -> Result<()> {
        self.bs.validate()?;
        self.ue.validate()?;
        for (beta, b) in [(self.beta_bs, self.bs.half_beam), (self.beta_ue, self.ue.half_beam)] {
            if !(beta > 0.0 && beta <= 0.7 * b * (1.0 + 1e-9)) {
                return Err(AtscError::InvalidConfig(format!("β = {beta} outside (0, 0.7B] with B = {b}")));
            }
        }
        if self.rate_window < 2 {
            return Err(AtscError::InvalidConfig("rate window T_f must be at least 2".into()));
        }
        if !(self.zeta_db > 0.0) {
            return Err(AtscError::InvalidConfig("ζ must be positive".into()));
        }
        if self.tf_cap == 0 || self.fixed_tf == Some(0) {
            return Err(AtscError::InvalidConfig("tracking interval must be at least one slot".into()));
        }
        if !(self.search_cost_symbols >= 0.0) {
            return Err(AtscError::InvalidConfig("search cost must be non-negative".into()));
        }
        if !(self.initial_error_scale >= 0.0) {
            return Err(AtscError::InvalidConfig("initial error scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Beam-tracking state carried across slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolState {
    pub bs_beam: BeamState,
    pub ue_beam: BeamState,
    /// Slots per tracking interval.
    pub t_f: u32,
    /// Slots since the last tracking update, counted from 1.
    pub c_f: u32,
    /// `Γ(τ)` in dB for the slots since the last beam update.
    pub gamma_history: Vec<f64>,
    /// `(slot, Ψ, Φ)` at each beam change since the last alignment, oldest
    /// first; beams are piecewise constant in between.
    pub angle_history: VecDeque<(u64, f64, f64)>,
    pub realign_flag: bool,
    /// Per-symbol SNR estimate used in [`GammaMode::TrackedEstimate`].
    pub snr_estimate: Option<f64>,
    /// Tracking updates since the last alignment.
    pub updates_since_alignment: usize,
}

impl ProtocolState {
    /// Fresh state after an alignment at `slot`; the first tracking update is
    /// due in the next slot.
    pub fn aligned(bs_beam: BeamState, ue_beam: BeamState, t_f: u32, slot: u64) -> Self {
        Self {
            bs_beam,
            ue_beam,
            t_f,
            c_f: t_f,
            gamma_history: Vec::new(),
            angle_history: VecDeque::from([(slot, bs_beam.direction.value(), ue_beam.direction.value())]),
            realign_flag: false,
            snr_estimate: None,
            updates_since_alignment: 0,
        }
    }

    /// Data beams in force at `slot` according to the stored history.
    pub fn beams_at(&self, slot: u64) -> Option<(f64, f64)> {
        self.angle_history
            .iter()
            .rev()
            .find(|e| e.0 <= slot)
            .map(|e| (e.1, e.2))
    }
}

/// One emitted row per slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub true_bs: f64,
    pub true_ue: f64,
    pub beam_bs: f64,
    pub beam_ue: f64,
    pub snr_db: f64,
    pub snr_opt_db: f64,
    pub tracking: bool,
    pub realign: bool,
    pub t_f: u32,
}

/// Which sides carry more than one antenna and therefore need tracking.
fn tracked_sides(arrays: &ArrayPair) -> (bool, bool) {
    (arrays.bs.num_elements() > 1, arrays.ue.num_elements() > 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Use {
    Drift,
    Realignment,
}

/// Per-symbol post-beamforming SNR `P_T|w†Hf|²/σ²` of the current data beams as
/// seen by the given use of the reference.
fn reference_snr(state: &ProtocolState, channel: &ChannelState, arrays: &ArrayPair, params: &AtscParams, role: Use) -> f64 {
    let pilot = &params.bs.pilot;
    let per_symbol = pilot.tx_power / pilot.noise_var;
    let (bs, ue) = (state.bs_beam.direction, state.ue_beam.direction);
    let instantaneous = || per_symbol * channel.beamformed(arrays, bs, ue).norm_sqr();
    let mean = || per_symbol * channel.mean_beamformed_power(arrays, bs, ue);
    match (params.gamma_mode, role) {
        (GammaMode::Genie, Use::Drift) | (GammaMode::GenieInstantaneous, _) => instantaneous(),
        (GammaMode::Genie, Use::Realignment) | (GammaMode::GenieMean, _) => mean(),
        (GammaMode::TrackedEstimate, _) => state.snr_estimate.unwrap_or_else(instantaneous),
    }
}

/// Drift normalisation `Γ = n·P_T·|w†Hf|²/σ²` for a side with pilot length
/// `n`, floored at [`GAMMA_FLOOR`].
pub fn gamma_reference(state: &ProtocolState, channel: &ChannelState, arrays: &ArrayPair, tracker: &TrackerParams, params: &AtscParams) -> f64 {
    (tracker.pilot.length as f64 * reference_snr(state, channel, arrays, params, Use::Drift)).max(GAMMA_FLOOR)
}

/// `Γ(t)` in dB as used by the realignment test. Pilot length is dropped since
/// only ratios matter.
pub fn realignment_gamma_db(state: &ProtocolState, channel: &ChannelState, arrays: &ArrayPair, params: &AtscParams) -> f64 {
    linear_to_db(reference_snr(state, channel, arrays, params, Use::Realignment).max(GAMMA_FLOOR))
}

/// Feeds one noisy data-beam measurement into the tracked SNR estimate. The
/// measurement is χ²₂ with non-centrality `2n·SNR`; `(Q − 2)/(2n)` is unbiased
/// for the per-symbol SNR.
pub fn observe_data_beam<R: Rng + ?Sized>(state: &mut ProtocolState, channel: &ChannelState, arrays: &ArrayPair, params: &AtscParams, rng: &mut R) {
    let pilot = &params.bs.pilot;
    let n = pilot.length as f64;
    let snr = pilot.tx_power / pilot.noise_var * channel.beamformed(arrays, state.bs_beam.direction, state.ue_beam.direction).norm_sqr();
    let q = sample_noncentral_chi2(2.0 * n * snr, rng);
    let sample = (q - 2.0) / (2.0 * n);
    let next = match state.snr_estimate {
        None => sample,
        Some(prev) => ESTIMATE_SMOOTHING * prev + (1.0 - ESTIMATE_SMOOTHING) * sample,
    };
    state.snr_estimate = Some(next.max(GAMMA_FLOOR));
}

/// Measures both sides with the previous beams and applies the two updates
/// together. Returns the number of pilot symbols spent.
pub fn tracking_slot<R: Rng + ?Sized>(
    state: &mut ProtocolState,
    channel: &ChannelState,
    arrays: &ArrayPair,
    params: &AtscParams,
    slot: u64,
    rng: &mut R,
) -> Result<f64> {
    let (track_bs, track_ue) = tracked_sides(arrays);
    let (bs_prev, ue_prev) = (state.bs_beam, state.ue_beam);
    let mut symbols = 0.0;

    let mut bs_next = bs_prev;
    if track_bs {
        let gamma = gamma_reference(state, channel, arrays, &params.bs, params);
        let (plus, minus) = sampling_directions(&bs_prev, &params.bs);
        let h_plus = channel.beamformed(arrays, plus, ue_prev.direction);
        let h_minus = channel.beamformed(arrays, minus, ue_prev.direction);
        let pair = sample_pair(&params.bs.pilot, h_plus, h_minus, rng);
        bs_next = update(&bs_prev, &pair, gamma, &params.bs)?;
        symbols += 2.0 * params.bs.pilot.length as f64;
    }

    let mut ue_next = ue_prev;
    if track_ue {
        let gamma = gamma_reference(state, channel, arrays, &params.ue, params);
        let (plus, minus) = sampling_directions(&ue_prev, &params.ue);
        let h_plus = channel.beamformed(arrays, bs_prev.direction, plus);
        let h_minus = channel.beamformed(arrays, bs_prev.direction, minus);
        let pair = sample_pair(&params.ue.pilot, h_plus, h_minus, rng);
        ue_next = update(&ue_prev, &pair, gamma, &params.ue)?;
        symbols += 2.0 * params.ue.pilot.length as f64;
    }

    state.bs_beam = bs_next;
    state.ue_beam = ue_next;
    state.c_f = 1;
    state.updates_since_alignment += 1;
    state.angle_history.push_back((slot, bs_next.direction.value(), ue_next.direction.value()));
    // Older entries are only needed to look back (T_f − 1) intervals of at most
    // the cap; keep one entry before that horizon for the lookup.
    let horizon = slot.saturating_sub((params.rate_window as u64 - 1) * params.tf_cap as u64);
    while state.angle_history.len() > 1 && state.angle_history[1].0 <= horizon {
        state.angle_history.pop_front();
    }
    Ok(symbols)
}

/// Per-slot angular speed of the data beams, per side, at `slot`.
///
/// The beam path is sampled every `t_f` slots going back from `slot`, over up to
/// `T_f − 1` intervals that fit in the history since the last alignment, and the
/// absolute changes are averaged.
pub fn angular_rates(state: &ProtocolState, slot: u64, rate_window: usize) -> Option<(f64, f64)> {
    let first = state.angle_history.front()?.0;
    let tf = state.t_f.max(1) as u64;
    let intervals = ((slot.checked_sub(first)? / tf) as usize).min(rate_window - 1);
    if intervals == 0 {
        return None;
    }
    let (mut bs, mut ue) = (0.0, 0.0);
    let mut later = state.beams_at(slot)?;
    for k in 1..=intervals as u64 {
        let earlier = state.beams_at(slot - k * tf)?;
        bs += (later.0 - earlier.0).abs();
        ue += (later.1 - earlier.1).abs();
        later = earlier;
    }
    let span = (tf * intervals as u64) as f64;
    Some((bs / span, ue / span))
}

/// Tracking interval from per-slot angular rates:
/// `max(min(⌊β_T/α_ψ⌋, ⌊β_R/α_φ⌋), 1)`, capped. A side with zero rate (or an
/// untracked side) contributes the cap.
pub fn interval_from_rates(alpha_bs: Option<f64>, alpha_ue: Option<f64>, params: &AtscParams) -> u32 {
    let cap = params.tf_cap as f64;
    // The tolerance keeps exact ratios such as 0.7/0.05 from flooring one short.
    let side = |beta: f64, alpha: Option<f64>| match alpha {
        Some(a) if a > 0.0 => (beta / a + 1e-9).floor().min(cap),
        _ => cap,
    };
    let tf = side(params.beta_bs, alpha_bs).min(side(params.beta_ue, alpha_ue));
    tf.max(1.0) as u32
}

/// New `t_f` after a tracking update at `slot`. Until `T_f` updates have been
/// made since the last alignment the interval is left unchanged.
pub fn update_rate(state: &ProtocolState, arrays: &ArrayPair, params: &AtscParams, slot: u64) -> u32 {
    if let Some(tf) = params.fixed_tf {
        return tf;
    }
    if state.updates_since_alignment < params.rate_window {
        return state.t_f;
    }
    let (track_bs, track_ue) = tracked_sides(arrays);
    match angular_rates(state, slot, params.rate_window) {
        Some((a_bs, a_ue)) => interval_from_rates(track_bs.then_some(a_bs), track_ue.then_some(a_ue), params),
        None => state.t_f,
    }
}

/// `Γ(t) < max Γ(τ) − ζ` over the window since the last beam update (all in
/// dB). An empty window never triggers.
pub fn check_realignment(state: &ProtocolState, current_gamma_db: f64, params: &AtscParams) -> bool {
    state
        .gamma_history
        .iter()
        .copied()
        .reduce(f64::max)
        .is_some_and(|peak| current_gamma_db < peak - params.zeta_db)
}

/// Oracle search at `slot`: both beams snap to the path with the largest mean
/// power, with independent uniform errors in `[-s·B, s·B]` per side. History is
/// cleared and `t_f` reset to 1 (or the fixed interval) with a tracking update
/// due in the next slot.
pub fn realign<R: Rng + ?Sized>(
    state: &mut ProtocolState,
    channel: &ChannelState,
    arrays: &ArrayPair,
    params: &AtscParams,
    error_scale: f64,
    rng: &mut R,
) -> Result<()> {
    let path = channel.strongest_mean().ok_or(AtscError::NoPath { slot: channel.slot })?;
    let mut jitter = |b: f64| if error_scale > 0.0 { rng.gen_range(-error_scale * b..=error_scale * b) } else { 0.0 };
    let bs = path.bs_angle.offset(jitter(arrays.bs.half_beam_width()));
    let ue = path.ue_angle.offset(jitter(arrays.ue.half_beam_width()));
    *state = ProtocolState::aligned(BeamState::new(bs), BeamState::new(ue), params.fixed_tf.unwrap_or(1), channel.slot);
    Ok(())
}

/// Output of one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<SlotRecord>,
    pub tracking_slots: u64,
    pub realignments: u64,
    /// Pilot symbols spent on tracking measurements.
    pub tracking_symbols: f64,
    /// Pilot symbols charged for realignment searches.
    pub search_symbols: f64,
    /// Why the run stopped before `num_slots`, if it did.
    pub terminated: Option<String>,
}

/// The two independent streams of a run: channel realisation, and protocol
/// randomness (measurement noise, alignment errors). Keeping them apart makes
/// the channel sequence independent of the protocol's decisions.
pub fn run_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut channel = ChaCha8Rng::seed_from_u64(seed);
    channel.set_stream(0);
    let mut protocol = ChaCha8Rng::seed_from_u64(seed);
    protocol.set_stream(1);
    (channel, protocol)
}

/// Runs the protocol for up to `num_slots` slots. Slot 0 carries the initial
/// alignment (not charged as a realignment).
pub fn run(model: &MobilityModel, arrays: &ArrayPair, params: &AtscParams, num_slots: u64, seed: u64) -> Result<RunOutcome> {
    run_with(model, arrays, params, num_slots, seed, |_, _| {})
}

/// [`run`] with a callback that sees each slot's channel next to its record.
pub fn run_with<F>(model: &MobilityModel, arrays: &ArrayPair, params: &AtscParams, num_slots: u64, seed: u64, mut observe: F) -> Result<RunOutcome>
where
    F: FnMut(&ChannelState, &SlotRecord),
{
    params.validate()?;
    let (mut ch_rng, mut rng) = run_rngs(seed);
    let source = model.start(&mut ch_rng);
    let mut out = RunOutcome {
        records: Vec::with_capacity(num_slots.min(1 << 24) as usize),
        tracking_slots: 0,
        realignments: 0,
        tracking_symbols: 0.0,
        search_symbols: 0.0,
        terminated: None,
    };
    let mut state = ProtocolState::aligned(BeamState::default(), BeamState::default(), 1, 0);
    let per_symbol = params.bs.pilot.tx_power / params.bs.pilot.noise_var;

    for slot in 0..num_slots {
        let channel = match source.state(slot, &mut ch_rng) {
            Ok(c) => c,
            Err(e) => {
                out.terminated = Some(e.to_string());
                break;
            }
        };

        let mut tracking = false;
        let mut realigned = false;
        let step = if slot == 0 {
            realign(&mut state, &channel, arrays, params, params.initial_error_scale, &mut rng)
        } else if state.realign_flag {
            realigned = true;
            realign(&mut state, &channel, arrays, params, 1.0, &mut rng)
        } else if state.c_f >= state.t_f {
            tracking = true;
            tracking_slot(&mut state, &channel, arrays, params, slot, &mut rng).map(|symbols| {
                out.tracking_symbols += symbols;
                state.t_f = update_rate(&state, arrays, params, slot);
            })
        } else {
            state.c_f += 1;
            Ok(())
        };
        if let Err(e) = step {
            match e {
                AtscError::NoPath { .. } | AtscError::ChannelEnded { .. } => {
                    out.terminated = Some(e.to_string());
                    break;
                }
                other => return Err(other),
            }
        }
        if realigned {
            out.realignments += 1;
            out.search_symbols += params.search_cost_symbols;
        }
        if params.gamma_mode == GammaMode::TrackedEstimate {
            observe_data_beam(&mut state, &channel, arrays, params, &mut rng);
        }
        // The window runs from the latest beam update up to the previous slot:
        // a tracking slot is still judged against the window before it, then
        // opens a new one. An alignment starts from an empty window.
        let gamma_db = realignment_gamma_db(&state, &channel, arrays, params);
        state.realign_flag = check_realignment(&state, gamma_db, params);
        if tracking {
            out.tracking_slots += 1;
            state.gamma_history.clear();
        }
        state.gamma_history.push(gamma_db);

        let xi = per_symbol * channel.beamformed(arrays, state.bs_beam.direction, state.ue_beam.direction).norm_sqr();
        let xi_opt = per_symbol * optimal_snr(&channel, arrays);
        let (true_bs, true_ue) = channel
            .strongest_mean()
            .map(|p| (p.bs_angle.value(), p.ue_angle.value()))
            .unwrap_or((f64::NAN, f64::NAN));
        let record = SlotRecord {
            slot,
            true_bs,
            true_ue,
            beam_bs: state.bs_beam.direction.value(),
            beam_ue: state.ue_beam.direction.value(),
            snr_db: linear_to_db(xi),
            snr_opt_db: linear_to_db(xi_opt),
            tracking,
            realign: realigned,
            t_f: state.t_f,
        };
        observe(&channel, &record);
        out.records.push(record);
    }
    Ok(out)
}
