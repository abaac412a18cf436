//! Per-run metrics from a slot trace and their ensemble summary.

use serde::{Deserialize, Serialize};

use crate::atsc::{AtscParams, SlotRecord};
use crate::channel::{db_to_linear, linear_to_db, ArrayPair};
use crate::error::{AtscError, Result};

/// Loss relative to the genie SNR that counts a slot as degraded.
pub const KAPPA_THRESHOLD_DB: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub slots: u64,
    /// Time average of the linear SNR, in dB.
    pub mean_snr_db: f64,
    /// Same average for the genie beams.
    pub mean_opt_snr_db: f64,
    /// `mean_opt_snr_db − mean_snr_db`.
    pub snr_gap_db: f64,
    /// Fraction of slots at least 3 dB below the genie SNR.
    pub kappa: f64,
    pub realign_count: u64,
    pub tracking_slots: u64,
    pub tracking_fraction: f64,
    /// Pilot symbols (tracking plus realignment searches) over all symbols,
    /// capped at 1.
    pub overhead_fraction: f64,
    /// Time-averaged SNR of the best DFT codebook pair, when computed.
    pub mean_codebook_snr_db: Option<f64>,
}

/// Pilot symbols one tracking slot costs: two `n`-symbol measurements per
/// side with more than one antenna.
pub fn tracking_slot_symbols(arrays: &ArrayPair, params: &AtscParams) -> f64 {
    let side = |n: usize, len: usize| if n > 1 { 2.0 * len as f64 } else { 0.0 };
    side(arrays.bs.num_elements(), params.bs.pilot.length) + side(arrays.ue.num_elements(), params.ue.pilot.length)
}

/// Linear-domain mean of dB values, in dB.
pub fn mean_db(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, c), v| (s + db_to_linear(v), c + 1));
    linear_to_db(sum / count.max(1) as f64)
}

pub fn compute_metrics(trace: &[SlotRecord], arrays: &ArrayPair, params: &AtscParams, symbols_per_slot: f64) -> Result<Metrics> {
    if trace.is_empty() {
        return Err(AtscError::InvalidConfig("empty trace".into()));
    }
    if !(symbols_per_slot > 0.0) {
        return Err(AtscError::InvalidConfig("symbols per slot must be positive".into()));
    }
    let slots = trace.len() as u64;
    let mean_snr_db = mean_db(trace.iter().map(|r| r.snr_db));
    let mean_opt_snr_db = mean_db(trace.iter().map(|r| r.snr_opt_db));
    let degraded = trace
        .iter()
        .filter(|r| r.snr_db - r.snr_opt_db < -KAPPA_THRESHOLD_DB)
        .count();
    let realign_count = trace.iter().filter(|r| r.realign).count() as u64;
    let tracking_slots = trace.iter().filter(|r| r.tracking).count() as u64;
    let spent = tracking_slots as f64 * tracking_slot_symbols(arrays, params) + realign_count as f64 * params.search_cost_symbols;
    Ok(Metrics {
        slots,
        mean_snr_db,
        mean_opt_snr_db,
        snr_gap_db: mean_opt_snr_db - mean_snr_db,
        kappa: degraded as f64 / slots as f64,
        realign_count,
        tracking_slots,
        tracking_fraction: tracking_slots as f64 / slots as f64,
        overhead_fraction: (spent / (slots as f64 * symbols_per_slot)).min(1.0),
        mean_codebook_snr_db: None,
    })
}

/// Ensemble statistics over trials, with the per-trial samples behind the
/// empirical CDFs kept sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    /// Trials with at least one realignment.
    pub realign_fraction: f64,
    pub mean_realignments: f64,
    pub mean_kappa: f64,
    /// Trials with `κ > 0.01`.
    pub kappa_above_1pct: f64,
    pub median_snr_gap_db: f64,
    pub median_snr_db: f64,
    pub mean_tracking_fraction: f64,
    pub mean_overhead_fraction: f64,
    /// Trials that ended before the requested number of slots.
    pub terminated: usize,
    pub cdf_mean_snr_db: Vec<f64>,
    pub cdf_mean_opt_snr_db: Vec<f64>,
    pub cdf_kappa: Vec<f64>,
}

fn sorted(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Median of sorted samples (mean of the middle two for even counts).
pub fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

pub fn summarize(metrics: &[Metrics], terminated: usize) -> Summary {
    let n = metrics.len().max(1) as f64;
    let mean = |f: fn(&Metrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    let gaps = sorted(metrics.iter().map(|m| m.snr_gap_db));
    let cdf_mean_snr_db = sorted(metrics.iter().map(|m| m.mean_snr_db));
    Summary {
        trials: metrics.len(),
        realign_fraction: metrics.iter().filter(|m| m.realign_count > 0).count() as f64 / n,
        mean_realignments: mean(|m| m.realign_count as f64),
        mean_kappa: mean(|m| m.kappa),
        kappa_above_1pct: metrics.iter().filter(|m| m.kappa > 0.01).count() as f64 / n,
        median_snr_gap_db: median(&gaps),
        median_snr_db: median(&cdf_mean_snr_db),
        mean_tracking_fraction: mean(|m| m.tracking_fraction),
        mean_overhead_fraction: mean(|m| m.overhead_fraction),
        terminated,
        cdf_mean_snr_db,
        cdf_mean_opt_snr_db: sorted(metrics.iter().map(|m| m.mean_opt_snr_db)),
        cdf_kappa: sorted(metrics.iter().map(|m| m.kappa)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayConfig;

    fn record(slot: u64, snr_db: f64, opt_db: f64) -> SlotRecord {
        SlotRecord {
            slot,
            true_bs: 0.0,
            true_ue: 0.0,
            beam_bs: 0.0,
            beam_ue: 0.0,
            snr_db,
            snr_opt_db: opt_db,
            tracking: slot % 10 == 0,
            realign: slot == 500,
            t_f: 10,
        }
    }

    fn setup() -> (ArrayPair, AtscParams) {
        let arrays = ArrayPair::new(ArrayConfig::new(32).unwrap(), ArrayConfig::new(32).unwrap());
        let params = AtscParams::recommended(&arrays, 16);
        (arrays, params)
    }

    #[test]
    fn kappa_counts_slots_three_db_down() {
        let (arrays, params) = setup();
        let exact: Vec<_> = (0..1000).map(|t| record(t, 10.0, 10.0)).collect();
        let m = compute_metrics(&exact, &arrays, &params, 64.0).unwrap();
        assert_eq!(m.kappa, 0.0);
        assert!((m.snr_gap_db).abs() < 1e-12);
        let lossy: Vec<_> = (0..1000).map(|t| record(t, if t < 100 { 6.0 } else { 10.0 }, 10.0)).collect();
        let m = compute_metrics(&lossy, &arrays, &params, 64.0).unwrap();
        assert!((m.kappa - 0.1).abs() < 1e-12);
    }

    #[test]
    fn averages_are_linear() {
        let (arrays, params) = setup();
        let trace = vec![record(1, 0.0, 10.0), record(2, 10.0, 10.0)];
        let m = compute_metrics(&trace, &arrays, &params, 64.0).unwrap();
        assert!((m.mean_snr_db - linear_to_db(5.5)).abs() < 1e-12);
        assert!((m.mean_opt_snr_db - 10.0).abs() < 1e-12);
    }

    #[test]
    fn overhead_accounting() {
        let (arrays, params) = setup();
        let trace: Vec<_> = (0..1000).map(|t| record(t, 10.0, 10.0)).collect();
        let m = compute_metrics(&trace, &arrays, &params, 64.0).unwrap();
        assert_eq!(m.tracking_slots, 100);
        assert_eq!(m.realign_count, 1);
        let expected = (100.0 * 64.0 + 64.0 * 16.0) / (1000.0 * 64.0);
        assert!((m.overhead_fraction - expected).abs() < 1e-12);
        assert!((m.tracking_fraction - 0.1).abs() < 1e-12);
        let one_sided = ArrayPair::new(ArrayConfig::new(64).unwrap(), ArrayConfig::new(1).unwrap());
        assert_eq!(tracking_slot_symbols(&one_sided, &params), 32.0);
        assert!(compute_metrics(&[], &arrays, &params, 64.0).is_err());
        assert_eq!(compute_metrics(&trace, &arrays, &params, 1e-3).unwrap().overhead_fraction, 1.0);
    }

    #[test]
    fn summary_statistics() {
        let (arrays, params) = setup();
        let a: Vec<_> = (0..100).map(|t| record(t, 10.0, 10.0)).collect();
        let b: Vec<_> = (0..100).map(|t| record(t, if t < 5 { 0.0 } else { 10.0 }, 10.0)).collect();
        let ms = vec![
            compute_metrics(&a, &arrays, &params, 64.0).unwrap(),
            compute_metrics(&b, &arrays, &params, 64.0).unwrap(),
        ];
        let s = summarize(&ms, 0);
        assert_eq!(s.trials, 2);
        assert_eq!(s.kappa_above_1pct, 0.5);
        assert_eq!(s.cdf_kappa, vec![0.0, 0.05]);
        assert!(s.cdf_mean_snr_db.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(median(&[1.0, 2.0, 4.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0]), 1.5);
    }
}
