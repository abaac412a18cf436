//! TOML run configuration. The schema is documented in `configs/README.md`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use atsc_core::array::ArrayConfig;
use atsc_core::atsc::{AtscParams, GammaMode};
use atsc_core::channel::{AngularMotion, ArrayPair, MobilityModel, TrajectoryData};
use atsc_core::harness::experiment::ScenarioSpec;
use atsc_core::harness::scenarios::default_symbols_per_slot;
use atsc_core::harness::trajectory::{km_per_h_to_m_per_s, synth_trajectory, RouteProfile, K_LOS_DB, K_NLOS_DB, SLOT_DURATION_S};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Slots per run; trajectory runs default to the whole route.
    pub slots: Option<u64>,
    pub symbols_per_slot: Option<f64>,
    #[serde(default)]
    pub codebook_baseline: bool,
    #[serde(default = "default_keep_traces")]
    pub keep_traces: usize,
    pub arrays: ArraysSection,
    pub mobility: MobilitySection,
    #[serde(default)]
    pub atsc: AtscSection,
}

fn default_trials() -> usize {
    1
}

fn default_keep_traces() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraysSection {
    pub bs: usize,
    pub ue: usize,
}

/// Angular rates are given in units of the side's half beam width per slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MobilitySection {
    Fixed {
        snr_db: f64,
        #[serde(default)]
        bs_start: f64,
        #[serde(default)]
        ue_start: f64,
        #[serde(default)]
        bs_rate_over_b: f64,
        #[serde(default)]
        ue_rate_over_b: f64,
    },
    Rician {
        k_factor_db: f64,
        mean_snr_db: f64,
        #[serde(default)]
        bs_start: f64,
        #[serde(default)]
        ue_start: f64,
        #[serde(default)]
        bs_rate_over_b: f64,
        #[serde(default)]
        ue_rate_over_b: f64,
    },
    Trajectory {
        /// Trajectory CSV; when absent a synthetic route is generated.
        file: Option<PathBuf>,
        #[serde(default = "default_profile")]
        profile: RouteProfile,
        #[serde(default)]
        route_seed: u64,
        speed_kmh: f64,
        #[serde(default = "default_slot_s")]
        slot_s: f64,
        #[serde(default = "default_k_los")]
        k_los_db: f64,
        #[serde(default = "default_k_nlos")]
        k_nlos_db: f64,
    },
}

fn default_profile() -> RouteProfile {
    RouteProfile::NlosLosNlos
}
fn default_slot_s() -> f64 {
    SLOT_DURATION_S
}
fn default_k_los() -> f64 {
    K_LOS_DB
}
fn default_k_nlos() -> f64 {
    K_NLOS_DB
}

/// Protocol settings; anything left out keeps the recommended value.
/// Angles are in units of the side's half beam width.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtscSection {
    pub pilot_length: Option<usize>,
    pub perturb_over_b: Option<f64>,
    pub step_over_b: Option<f64>,
    pub beta_over_b: Option<f64>,
    pub beta_bs_over_b: Option<f64>,
    pub beta_ue_over_b: Option<f64>,
    pub zeta_db: Option<f64>,
    pub rate_window: Option<usize>,
    pub gamma_mode: Option<GammaMode>,
    pub tf_cap: Option<u32>,
    pub fixed_tf: Option<u32>,
    pub search_cost_symbols: Option<f64>,
    pub initial_error_scale: Option<f64>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Resolves the configuration. Relative trajectory paths are taken from
    /// `base_dir`.
    pub fn to_spec(&self, base_dir: &Path) -> Result<ScenarioSpec> {
        let arrays = ArrayPair::new(ArrayConfig::new(self.arrays.bs)?, ArrayConfig::new(self.arrays.ue)?);
        let (b_bs, b_ue) = (arrays.bs.half_beam_width(), arrays.ue.half_beam_width());
        let atsc = self.atsc.resolve(&arrays)?;
        let motion = |bs_start: f64, ue_start: f64, bs_rate: f64, ue_rate: f64| AngularMotion {
            bs_start,
            ue_start,
            bs_rate: bs_rate * b_bs,
            ue_rate: ue_rate * b_ue,
        };
        let mobility = match &self.mobility {
            MobilitySection::Fixed { snr_db, bs_start, ue_start, bs_rate_over_b, ue_rate_over_b } => MobilityModel::FixedSinglePath {
                snr_db: *snr_db,
                motion: motion(*bs_start, *ue_start, *bs_rate_over_b, *ue_rate_over_b),
            },
            MobilitySection::Rician { k_factor_db, mean_snr_db, bs_start, ue_start, bs_rate_over_b, ue_rate_over_b } => MobilityModel::RicianPath {
                k_factor_db: *k_factor_db,
                mean_snr_db: *mean_snr_db,
                motion: motion(*bs_start, *ue_start, *bs_rate_over_b, *ue_rate_over_b),
            },
            MobilitySection::Trajectory { file, profile, route_seed, speed_kmh, slot_s, k_los_db, k_nlos_db } => {
                if !(*speed_kmh > 0.0 && *slot_s > 0.0) {
                    bail!("trajectory speed and slot duration must be positive");
                }
                let data = match file {
                    Some(f) => TrajectoryData::from_csv_path(base_dir.join(f))?,
                    None => synth_trajectory(*profile, *route_seed)?,
                };
                MobilityModel::Trajectory {
                    data: Arc::new(data),
                    slot_duration_s: *slot_s,
                    speed_m_per_s: km_per_h_to_m_per_s(*speed_kmh),
                    k_los_db: *k_los_db,
                    k_nlos_db: *k_nlos_db,
                }
            }
        };
        let num_slots = match (self.slots, mobility.horizon_slots()) {
            (Some(n), Some(h)) => n.min(h),
            (Some(n), None) => n,
            (None, Some(h)) => h,
            (None, None) => bail!("`slots` is required unless the mobility model is a trajectory"),
        };
        let spec = ScenarioSpec {
            name: self.name.clone(),
            mobility,
            arrays,
            atsc,
            num_slots,
            num_trials: self.trials,
            seed: self.seed,
            symbols_per_slot: self.symbols_per_slot.unwrap_or_else(|| default_symbols_per_slot(atsc.bs.pilot.length)),
            codebook_baseline: self.codebook_baseline,
            keep_traces: self.keep_traces,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl AtscSection {
    fn resolve(&self, arrays: &ArrayPair) -> Result<AtscParams> {
        let mut p = AtscParams::recommended(arrays, self.pilot_length.unwrap_or(16));
        for (tracker, b) in [(&mut p.bs, arrays.bs.half_beam_width()), (&mut p.ue, arrays.ue.half_beam_width())] {
            if let Some(x) = self.perturb_over_b {
                tracker.perturb = x * b;
            }
            if let Some(x) = self.step_over_b {
                tracker.step = x * b;
            }
        }
        if let Some(beta) = self.beta_bs_over_b.or(self.beta_over_b) {
            p.beta_bs = beta * arrays.bs.half_beam_width();
        }
        if let Some(beta) = self.beta_ue_over_b.or(self.beta_over_b) {
            p.beta_ue = beta * arrays.ue.half_beam_width();
        }
        if let Some(z) = self.zeta_db {
            p.zeta_db = z;
        }
        if let Some(w) = self.rate_window {
            p.rate_window = w;
        }
        if let Some(m) = self.gamma_mode {
            p.gamma_mode = m;
        }
        if let Some(c) = self.tf_cap {
            p.tf_cap = c;
        }
        if self.fixed_tf.is_some() {
            p.fixed_tf = self.fixed_tf;
        }
        if let Some(c) = self.search_cost_symbols {
            p.search_cost_symbols = c;
        }
        if let Some(s) = self.initial_error_scale {
            p.initial_error_scale = s;
        }
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_SIDED: &str = r#"
name = "los"
seed = 3
trials = 10
slots = 200

[arrays]
bs = 32
ue = 32

[mobility]
kind = "rician"
k_factor_db = 13.2
mean_snr_db = -20.0
bs_start = -0.75
ue_start = 0.75
bs_rate_over_b = 0.05
ue_rate_over_b = -0.05

[atsc]
beta_over_b = 0.7
gamma_mode = "genie_mean"
"#;

    #[test]
    fn parses_and_scales_by_half_beam() {
        let spec = RunConfig::from_toml(TWO_SIDED).unwrap().to_spec(Path::new(".")).unwrap();
        assert_eq!(spec.num_slots, 200);
        assert_eq!(spec.num_trials, 10);
        assert!((spec.atsc.beta_bs - 0.7 / 32.0).abs() < 1e-15);
        assert_eq!(spec.atsc.gamma_mode, GammaMode::GenieMean);
        assert_eq!(spec.symbols_per_slot, 64.0);
        match spec.mobility {
            MobilityModel::RicianPath { motion, .. } => assert!((motion.ue_rate + 0.05 / 32.0).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_keys_and_missing_slots() {
        assert!(RunConfig::from_toml(&TWO_SIDED.replace("seed = 3", "sed = 3")).is_err());
        let no_slots = RunConfig::from_toml(&TWO_SIDED.replace("slots = 200", "")).unwrap();
        assert!(no_slots.to_spec(Path::new(".")).is_err());
    }

    #[test]
    fn trajectory_defaults_to_whole_route() {
        let text = r#"
name = "route"
[arrays]
bs = 32
ue = 32
[mobility]
kind = "trajectory"
speed_kmh = 72.0
"#;
        let spec = RunConfig::from_toml(text).unwrap().to_spec(Path::new(".")).unwrap();
        assert!((40_000..42_000).contains(&spec.num_slots), "{}", spec.num_slots);
    }
}
