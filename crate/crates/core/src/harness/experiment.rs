//! Ensembles of independent protocol runs and their CSV outputs.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::atsc::{run_with, AtscParams, SlotRecord};
use crate::channel::{linear_to_db, ArrayPair, MobilityModel};
use crate::error::{AtscError, Result};
use crate::harness::metrics::{compute_metrics, mean_db, summarize, Metrics, Summary};
use crate::harness::snr::codebook_baseline_snr;

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub mobility: MobilityModel,
    pub arrays: ArrayPair,
    pub atsc: AtscParams,
    pub num_slots: u64,
    pub num_trials: usize,
    pub seed: u64,
    /// Symbols per slot `x` in the overhead fraction.
    pub symbols_per_slot: f64,
    /// Also evaluate the best DFT codebook pair every slot.
    pub codebook_baseline: bool,
    /// Slot traces are kept for this many leading trials.
    pub keep_traces: usize,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_slots == 0 || self.num_trials == 0 {
            return Err(AtscError::InvalidConfig("need at least one slot and one trial".into()));
        }
        if !(self.symbols_per_slot > 0.0) {
            return Err(AtscError::InvalidConfig("symbols per slot must be positive".into()));
        }
        self.atsc.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub metrics: Metrics,
    pub terminated: Option<String>,
    pub trace: Option<Vec<SlotRecord>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    /// Ordered by trial index.
    pub trials: Vec<TrialResult>,
    pub summary: Summary,
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` in an experiment seeded with `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    mix(seed ^ mix(trial as u64))
}

pub fn run_trial(spec: &ScenarioSpec, trial: usize) -> Result<TrialResult> {
    let seed = trial_seed(spec.seed, trial);
    let mut codebook_db = Vec::new();
    let per_symbol = spec.atsc.bs.pilot.tx_power / spec.atsc.bs.pilot.noise_var;
    let outcome = run_with(&spec.mobility, &spec.arrays, &spec.atsc, spec.num_slots, seed, |channel, _| {
        if spec.codebook_baseline {
            codebook_db.push(linear_to_db(per_symbol * codebook_baseline_snr(channel, &spec.arrays)));
        }
    })?;
    if outcome.records.is_empty() {
        return Err(AtscError::InvalidConfig(format!(
            "trial {trial} produced no slots ({})",
            outcome.terminated.as_deref().unwrap_or("no reason")
        )));
    }
    let mut metrics = compute_metrics(&outcome.records, &spec.arrays, &spec.atsc, spec.symbols_per_slot)?;
    if spec.codebook_baseline {
        metrics.mean_codebook_snr_db = Some(mean_db(codebook_db));
    }
    Ok(TrialResult {
        trial,
        seed,
        metrics,
        terminated: outcome.terminated,
        trace: (trial < spec.keep_traces).then_some(outcome.records),
    })
}

/// Runs all trials on the current rayon pool. Results do not depend on the
/// number of threads.
pub fn run_experiment(spec: &ScenarioSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let trials = (0..spec.num_trials)
        .into_par_iter()
        .map(|i| run_trial(spec, i))
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<Metrics> = trials.iter().map(|t| t.metrics.clone()).collect();
    let terminated = trials.iter().filter(|t| t.terminated.is_some()).count();
    Ok(ExperimentResult {
        name: spec.name.clone(),
        summary: summarize(&metrics, terminated),
        trials,
    })
}

/// Trace CSV: `slot,true_bs,true_ue,beam_bs,beam_ue,snr_db,snr_opt_db,tracking,realign,t_f`.
pub fn write_trace_csv<W: Write>(records: &[SlotRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrialRow<'a> {
    trial: usize,
    seed: u64,
    slots: u64,
    mean_snr_db: f64,
    mean_opt_snr_db: f64,
    snr_gap_db: f64,
    kappa: f64,
    realign_count: u64,
    tracking_slots: u64,
    tracking_fraction: f64,
    overhead_fraction: f64,
    mean_codebook_snr_db: Option<f64>,
    terminated: &'a str,
}

/// One row of metrics per trial.
pub fn write_trials_csv<W: Write>(trials: &[TrialResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in trials {
        let m = &t.metrics;
        w.serialize(TrialRow {
            trial: t.trial,
            seed: t.seed,
            slots: m.slots,
            mean_snr_db: m.mean_snr_db,
            mean_opt_snr_db: m.mean_opt_snr_db,
            snr_gap_db: m.snr_gap_db,
            kappa: m.kappa,
            realign_count: m.realign_count,
            tracking_slots: m.tracking_slots,
            tracking_fraction: m.tracking_fraction,
            overhead_fraction: m.overhead_fraction,
            mean_codebook_snr_db: m.mean_codebook_snr_db,
            terminated: t.terminated.as_deref().unwrap_or(""),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Empirical CDFs as raw sorted samples: `rank,probability,mean_snr_db,mean_opt_snr_db,kappa`.
pub fn write_cdf_csv<W: Write>(summary: &Summary, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "probability", "mean_snr_db", "mean_opt_snr_db", "kappa"])?;
    let n = summary.cdf_mean_snr_db.len();
    for i in 0..n {
        w.write_record([
            (i + 1).to_string(),
            ((i + 1) as f64 / n as f64).to_string(),
            summary.cdf_mean_snr_db[i].to_string(),
            summary.cdf_mean_opt_snr_db[i].to_string(),
            summary.cdf_kappa[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayConfig;
    use crate::channel::AngularMotion;

    fn spec(trials: usize) -> ScenarioSpec {
        let arrays = ArrayPair::new(ArrayConfig::new(16).unwrap(), ArrayConfig::new(16).unwrap());
        let b = 1.0 / 16.0;
        ScenarioSpec {
            name: "test".into(),
            mobility: MobilityModel::RicianPath {
                k_factor_db: 13.2,
                mean_snr_db: -15.0,
                motion: AngularMotion { bs_start: 0.0, ue_start: 0.1, bs_rate: 0.05 * b, ue_rate: -0.05 * b },
            },
            arrays,
            atsc: AtscParams::recommended(&arrays, 16),
            num_slots: 200,
            num_trials: trials,
            seed: 11,
            symbols_per_slot: 64.0,
            codebook_baseline: true,
            keep_traces: 1,
        }
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| trial_seed(5, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(trial_seed(5, 0), trial_seed(6, 0));
    }

    #[test]
    fn experiment_is_deterministic_and_ordered() {
        let a = run_experiment(&spec(6)).unwrap();
        let b = run_experiment(&spec(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.iter().map(|t| t.trial).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
        assert!(a.trials[0].trace.is_some());
        assert!(a.trials[1].trace.is_none());
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| run_experiment(&spec(6))).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn codebook_between_tracked_and_genie_bounds() {
        let r = run_experiment(&spec(2)).unwrap();
        for t in &r.trials {
            let cb = t.metrics.mean_codebook_snr_db.unwrap();
            assert!(cb <= t.metrics.mean_opt_snr_db + 1e-9);
        }
    }

    #[test]
    fn csv_outputs_have_headers() {
        let r = run_experiment(&spec(2)).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(r.trials[0].trace.as_ref().unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("slot,true_bs,true_ue,beam_bs,beam_ue,snr_db,snr_opt_db,tracking,realign,t_f\n"));
        assert_eq!(text.lines().count(), 201);
        let mut buf = Vec::new();
        write_trials_csv(&r.trials, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("trial,seed,slots,mean_snr_db"));
        let mut buf = Vec::new();
        write_cdf_csv(&r.summary, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn invalid_spec() {
        let mut s = spec(1);
        s.num_trials = 0;
        assert!(run_experiment(&s).is_err());
        let mut s = spec(1);
        s.symbols_per_slot = 0.0;
        assert!(run_experiment(&s).is_err());
    }
}
