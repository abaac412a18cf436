//! Reference SNRs for a channel realisation: the best continuous beam pair and
//! the best DFT codebook pair.
//!
//! Values are beamformed power `|w†Hf|²`; with `P_T = σ² = 1` this is the SNR.

use num_complex::Complex64;

use crate::array::{array_factor, SinAngle};
use crate::channel::{ArrayPair, ChannelState};

/// Refinement grid step as a fraction of the half beam width.
const FINE_STEP: f64 = 1.0 / 20.0;
const MAX_SWEEPS: usize = 8;

/// Beam pair maximising `|w†Hf|²` and the attained value.
///
/// A single path is solved in closed form. With several paths, each path's
/// own angle pair and the best codebook pair seed an alternating search that
/// fixes one side and scans the other over a grid of step `B/20` within `±B`.
pub fn optimal_beams(channel: &ChannelState, arrays: &ArrayPair) -> (SinAngle, SinAngle, f64) {
    match channel.paths.as_slice() {
        [] => (SinAngle::default(), SinAngle::default(), 0.0),
        [p] => (
            p.bs_angle,
            p.ue_angle,
            p.gain.norm_sqr() * (arrays.bs.num_elements() * arrays.ue.num_elements()) as f64,
        ),
        paths => {
            let mut seeds: Vec<(f64, f64)> = paths.iter().map(|p| (p.bs_angle.value(), p.ue_angle.value())).collect();
            let (cb_bs, cb_ue, _) = best_codebook_pair(channel, arrays);
            seeds.push((cb_bs.value(), cb_ue.value()));
            seeds
                .into_iter()
                .map(|seed| refine(channel, arrays, seed))
                .max_by(|a, b| a.2.total_cmp(&b.2))
                .expect("at least one seed")
        }
    }
}

pub fn optimal_snr(channel: &ChannelState, arrays: &ArrayPair) -> f64 {
    optimal_beams(channel, arrays).2
}

fn scan(center: f64, half_beam: f64, mut value: impl FnMut(f64) -> f64) -> (f64, f64) {
    let steps = (1.0 / FINE_STEP).round() as i32;
    let mut best = (center, value(center));
    for k in -steps..=steps {
        if k == 0 {
            continue;
        }
        let x = center + k as f64 * FINE_STEP * half_beam;
        if !(-1.0..=1.0).contains(&x) {
            continue;
        }
        let v = value(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

fn refine(channel: &ChannelState, arrays: &ArrayPair, seed: (f64, f64)) -> (SinAngle, SinAngle, f64) {
    let (mut bs, mut ue) = seed;
    let mut current = channel
        .beamformed(arrays, SinAngle::clamped(bs), SinAngle::clamped(ue))
        .norm_sqr();
    for _ in 0..MAX_SWEEPS {
        let before = current;
        let ue_weights: Vec<Complex64> = channel
            .paths
            .iter()
            .map(|p| p.gain * array_factor(&arrays.ue, p.ue_angle.value() - ue))
            .collect();
        let (new_bs, v) = scan(bs, arrays.bs.half_beam_width(), |x| {
            channel
                .paths
                .iter()
                .zip(&ue_weights)
                .map(|(p, a)| a * array_factor(&arrays.bs, x - p.bs_angle.value()))
                .sum::<Complex64>()
                .norm_sqr()
        });
        bs = new_bs;
        current = current.max(v);

        let bs_weights: Vec<Complex64> = channel
            .paths
            .iter()
            .map(|p| p.gain * array_factor(&arrays.bs, bs - p.bs_angle.value()))
            .collect();
        let (new_ue, v) = scan(ue, arrays.ue.half_beam_width(), |x| {
            channel
                .paths
                .iter()
                .zip(&bs_weights)
                .map(|(p, a)| a * array_factor(&arrays.ue, p.ue_angle.value() - x))
                .sum::<Complex64>()
                .norm_sqr()
        });
        ue = new_ue;
        current = current.max(v);
        if current <= before * (1.0 + 1e-12) {
            break;
        }
    }
    (SinAngle::clamped(bs), SinAngle::clamped(ue), current)
}

/// Best pair over the two DFT codebooks (exhaustive, `N_T·N_R` pairs).
pub fn best_codebook_pair(channel: &ChannelState, arrays: &ArrayPair) -> (SinAngle, SinAngle, f64) {
    let bs_book = arrays.bs.codebook();
    let ue_book = arrays.ue.codebook();
    if channel.paths.is_empty() {
        return (bs_book[0], ue_book[0], 0.0);
    }
    // Per-path factors for every codeword, so each pair costs L complex products.
    let bs_af: Vec<Vec<Complex64>> = bs_book
        .iter()
        .map(|c| channel.paths.iter().map(|p| array_factor(&arrays.bs, c.value() - p.bs_angle.value())).collect())
        .collect();
    let ue_af: Vec<Vec<Complex64>> = ue_book
        .iter()
        .map(|c| channel.paths.iter().map(|p| p.gain * array_factor(&arrays.ue, p.ue_angle.value() - c.value())).collect())
        .collect();
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (i, t) in bs_af.iter().enumerate() {
        for (j, r) in ue_af.iter().enumerate() {
            let v = t.iter().zip(r).map(|(a, b)| a * b).sum::<Complex64>().norm_sqr();
            if v > best.2 {
                best = (i, j, v);
            }
        }
    }
    (bs_book[best.0], ue_book[best.1], best.2)
}

/// SNR of exhaustive codebook search.
pub fn codebook_baseline_snr(channel: &ChannelState, arrays: &ArrayPair) -> f64 {
    best_codebook_pair(channel, arrays).2
}
