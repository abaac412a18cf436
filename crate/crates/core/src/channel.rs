//! Geometric multipath channel and the mobility models that drive it slot by
//! slot.
//!
//! SNRs are folded into the path gains: with `P_T = σ² = 1`, `|g|²` of a path is
//! its pre-beamforming SNR `γ` (linear).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path as FsPath;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::{array_factor, steering_vector, ArrayConfig, SinAngle};
use crate::error::{AtscError, Result};

/// Converts decibels to a linear power ratio. `-inf` maps to 0.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// BS (transmit, `N_T`) and UE (receive, `N_R`) array geometries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayPair {
    pub bs: ArrayConfig,
    pub ue: ArrayConfig,
}

impl ArrayPair {
    pub fn new(bs: ArrayConfig, ue: ArrayConfig) -> Self {
        Self { bs, ue }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    pub bs_angle: SinAngle,
    pub ue_angle: SinAngle,
    /// Large-scale (fading-averaged) power `E|g|²`.
    pub mean_power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub paths: Vec<Path>,
    pub slot: u64,
}

impl ChannelState {
    /// The path with the largest `|g|²`, ignoring paths with zero or non-finite gain.
    pub fn dominant(&self) -> Option<&Path> {
        self.paths
            .iter()
            .filter(|p| p.gain.norm_sqr().is_finite() && p.gain.norm_sqr() > 0.0)
            .max_by(|a, b| a.gain.norm_sqr().total_cmp(&b.gain.norm_sqr()))
    }

    /// The path with the largest large-scale power `E|g|²`.
    pub fn strongest_mean(&self) -> Option<&Path> {
        self.paths
            .iter()
            .filter(|p| p.mean_power.is_finite() && p.mean_power > 0.0)
            .max_by(|a, b| a.mean_power.total_cmp(&b.mean_power))
    }

    /// `w†(ue_beam) H f(bs_beam)` evaluated path by path through the closed-form
    /// array factors, without materialising `H`.
    pub fn beamformed(&self, arrays: &ArrayPair, bs_beam: SinAngle, ue_beam: SinAngle) -> Complex64 {
        self.paths
            .iter()
            .map(|p| {
                p.gain
                    * array_factor(&arrays.ue, p.ue_angle.value() - ue_beam.value())
                    * array_factor(&arrays.bs, bs_beam.value() - p.bs_angle.value())
            })
            .sum()
    }

    /// Fading-averaged beamformed power `Σ E|g_l|² G_R G_T`.
    pub fn mean_beamformed_power(&self, arrays: &ArrayPair, bs_beam: SinAngle, ue_beam: SinAngle) -> f64 {
        use crate::array::gain;
        self.paths
            .iter()
            .map(|p| {
                p.mean_power
                    * gain(&arrays.ue, p.ue_angle.value() - ue_beam.value())
                    * gain(&arrays.bs, bs_beam.value() - p.bs_angle.value())
            })
            .sum()
    }
}

/// `H = Σ g_l u(φ_l) v†(ψ_l)`, an `N_R × N_T` matrix.
pub fn channel_matrix(arrays: &ArrayPair, state: &ChannelState) -> Array2<Complex64> {
    let nr = arrays.ue.num_elements();
    let nt = arrays.bs.num_elements();
    let mut h = Array2::<Complex64>::zeros((nr, nt));
    for p in &state.paths {
        let u = steering_vector(&arrays.ue, p.ue_angle);
        let v = steering_vector(&arrays.bs, p.bs_angle);
        for (r, ur) in u.iter().enumerate() {
            for (t, vt) in v.iter().enumerate() {
                h[[r, t]] += p.gain * ur * vt.conj();
            }
        }
    }
    h
}

/// Constant angular velocity in the sin-domain for both ends of a path.
///
/// Rates are signed per-slot increments. The angle at slot `t` is
/// `start + rate·t`; once it leaves `[-1, 1]` the channel ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularMotion {
    pub bs_start: f64,
    pub ue_start: f64,
    pub bs_rate: f64,
    pub ue_rate: f64,
}

impl AngularMotion {
    pub fn angles_at(&self, slot: u64) -> Result<(SinAngle, SinAngle)> {
        let t = slot as f64;
        let bs = self.bs_start + self.bs_rate * t;
        let ue = self.ue_start + self.ue_rate * t;
        match (SinAngle::new(bs), SinAngle::new(ue)) {
            (Ok(b), Ok(u)) => Ok((b, u)),
            _ => Err(AtscError::ChannelEnded { slot }),
        }
    }
}

/// Ray-traced (or synthetic) path samples along a route.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    samples: Vec<TrajectorySample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub position_m: f64,
    pub paths: Vec<TrajectoryPath>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPath {
    pub path_id: u32,
    pub bs_angle: SinAngle,
    pub ue_angle: SinAngle,
    /// Mean pre-beamforming SNR contribution of the path in dB; `-inf` marks an
    /// absent path.
    pub gain_db: f64,
    pub los: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    position_m: f64,
    path_id: u32,
    bs_sin_angle: f64,
    ue_sin_angle: f64,
    gain_db: f64,
    los: u8,
}

impl TrajectoryData {
    /// Validates ordering (strictly increasing positions, at least two samples).
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(AtscError::Trajectory("need at least two samples".into()));
        }
        for w in samples.windows(2) {
            if !(w[1].position_m > w[0].position_m) {
                return Err(AtscError::Trajectory(format!(
                    "positions not strictly increasing at {} m",
                    w[1].position_m
                )));
            }
        }
        if let Some(s) = samples.iter().find(|s| !s.position_m.is_finite()) {
            return Err(AtscError::Trajectory(format!("non-finite position {}", s.position_m)));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn length_m(&self) -> f64 {
        self.samples.last().unwrap().position_m - self.samples[0].position_m
    }

    pub fn path_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .samples
            .iter()
            .flat_map(|s| s.paths.iter().map(|p| p.path_id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Reads the CSV format
    /// `position_m,path_id,bs_sin_angle,ue_sin_angle,gain_db,los`, one row per
    /// (position, path). Rows sharing a position form one sample and must be
    /// contiguous.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let expected = ["position_m", "path_id", "bs_sin_angle", "ue_sin_angle", "gain_db", "los"];
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(AtscError::Trajectory(format!(
                "unexpected header {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut samples: Vec<TrajectorySample> = Vec::new();
        for (line, row) in rdr.deserialize::<TrajectoryRow>().enumerate() {
            let row = row?;
            let bs_angle = SinAngle::new(row.bs_sin_angle)
                .map_err(|_| AtscError::Trajectory(format!("row {}: bs angle {} out of range", line + 2, row.bs_sin_angle)))?;
            let ue_angle = SinAngle::new(row.ue_sin_angle)
                .map_err(|_| AtscError::Trajectory(format!("row {}: ue angle {} out of range", line + 2, row.ue_sin_angle)))?;
            if row.gain_db.is_nan() || row.gain_db == f64::INFINITY {
                return Err(AtscError::Trajectory(format!("row {}: invalid gain", line + 2)));
            }
            let path = TrajectoryPath {
                path_id: row.path_id,
                bs_angle,
                ue_angle,
                gain_db: row.gain_db,
                los: row.los != 0,
            };
            match samples.last_mut() {
                Some(s) if s.position_m == row.position_m => {
                    if s.paths.iter().any(|p| p.path_id == row.path_id) {
                        return Err(AtscError::Trajectory(format!(
                            "row {}: duplicate path {} at {} m",
                            line + 2,
                            row.path_id,
                            row.position_m
                        )));
                    }
                    s.paths.push(path)
                }
                _ => samples.push(TrajectorySample {
                    position_m: row.position_m,
                    paths: vec![path],
                }),
            }
        }
        Self::new(samples)
    }

    pub fn from_csv_path(path: impl AsRef<FsPath>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.samples {
            for p in &s.paths {
                w.serialize(TrajectoryRow {
                    position_m: s.position_m,
                    path_id: p.path_id,
                    bs_sin_angle: p.bs_angle.value(),
                    ue_sin_angle: p.ue_angle.value(),
                    gain_db: p.gain_db,
                    los: p.los as u8,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Linearly interpolated paths at `position`. A path is present on a segment
    /// only if it has finite gain at both ends. `None` past either end.
    pub fn interpolate(&self, position: f64) -> Option<Vec<TrajectoryPath>> {
        let first = self.samples.first()?.position_m;
        let last = self.samples.last()?.position_m;
        // absorb rounding in speed·slot_duration·slot at the final sample
        let position = if position > last && position - last <= 1e-9 * last.abs().max(1.0) {
            last
        } else {
            position
        };
        if !(position >= first && position <= last) {
            return None;
        }
        let idx = self
            .samples
            .partition_point(|s| s.position_m <= position)
            .clamp(1, self.samples.len() - 1);
        let (left, right) = (&self.samples[idx - 1], &self.samples[idx]);
        let w = (position - left.position_m) / (right.position_m - left.position_m);
        let lerp = |a: f64, b: f64| a + (b - a) * w;
        let out = left
            .paths
            .iter()
            .filter(|p| p.gain_db.is_finite())
            .filter_map(|p| {
                let q = right.paths.iter().find(|q| q.path_id == p.path_id)?;
                if !q.gain_db.is_finite() {
                    return None;
                }
                Some(TrajectoryPath {
                    path_id: p.path_id,
                    bs_angle: SinAngle::clamped(lerp(p.bs_angle.value(), q.bs_angle.value())),
                    ue_angle: SinAngle::clamped(lerp(p.ue_angle.value(), q.ue_angle.value())),
                    gain_db: lerp(p.gain_db, q.gain_db),
                    los: p.los,
                })
            })
            .collect();
        Some(out)
    }
}

/// How the path geometry and gains evolve over slots.
#[derive(Debug, Clone, PartialEq)]
pub enum MobilityModel {
    /// Single path with constant gain (`|g|² = γ`) and constant angular speed.
    FixedSinglePath { snr_db: f64, motion: AngularMotion },
    /// Single path with per-slot independent Rician fading.
    RicianPath {
        k_factor_db: f64,
        mean_snr_db: f64,
        motion: AngularMotion,
    },
    /// Paths read off a route at constant speed, with Rician fading around the
    /// interpolated mean gain.
    Trajectory {
        data: Arc<TrajectoryData>,
        slot_duration_s: f64,
        speed_m_per_s: f64,
        k_los_db: f64,
        k_nlos_db: f64,
    },
}

impl MobilityModel {
    /// Starts one realisation. Per-run randomness (the phases of the
    /// deterministic Rician components) is drawn here.
    pub fn start<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelSource {
        let los_phases = match self {
            MobilityModel::FixedSinglePath { .. } => BTreeMap::new(),
            MobilityModel::RicianPath { .. } => {
                BTreeMap::from([(0u32, rng.gen_range(0.0..std::f64::consts::TAU))])
            }
            MobilityModel::Trajectory { data, .. } => data
                .path_ids()
                .into_iter()
                .map(|id| (id, rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect(),
        };
        ChannelSource {
            model: self.clone(),
            los_phases,
        }
    }

    /// Total slots available, if the model has a natural end.
    pub fn horizon_slots(&self) -> Option<u64> {
        match self {
            MobilityModel::Trajectory {
                data,
                slot_duration_s,
                speed_m_per_s,
                ..
            } => {
                let per_slot = slot_duration_s * speed_m_per_s;
                Some((data.length_m() / per_slot).floor() as u64 + 1)
            }
            _ => None,
        }
    }
}

/// A running instance of a [`MobilityModel`].
#[derive(Debug, Clone)]
pub struct ChannelSource {
    model: MobilityModel,
    los_phases: BTreeMap<u32, f64>,
}

/// `√P̄·(√(K/(K+1))·e^{jθ} + √(1/(K+1))·z)`, `z ~ CN(0, 1)`.
pub fn rician_gain<R: Rng + ?Sized>(mean_power: f64, k_linear: f64, los_phase: f64, rng: &mut R) -> Complex64 {
    let (los_amp, scatter_amp) = if k_linear.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k_linear / (k_linear + 1.0)).sqrt(), (1.0 / (k_linear + 1.0)).sqrt())
    };
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let scatter = Complex64::new(x, y) * std::f64::consts::FRAC_1_SQRT_2;
    (Complex64::from_polar(los_amp, los_phase) + scatter * scatter_amp) * mean_power.sqrt()
}

impl ChannelSource {
    pub fn model(&self) -> &MobilityModel {
        &self.model
    }

    /// Channel for `slot`. Fading is redrawn independently every slot; angles
    /// are deterministic.
    pub fn state<R: Rng + ?Sized>(&self, slot: u64, rng: &mut R) -> Result<ChannelState> {
        let paths = match &self.model {
            MobilityModel::FixedSinglePath { snr_db, motion } => {
                let (bs, ue) = motion.angles_at(slot)?;
                let p = db_to_linear(*snr_db);
                vec![Path {
                    gain: Complex64::new(p.sqrt(), 0.0),
                    bs_angle: bs,
                    ue_angle: ue,
                    mean_power: p,
                }]
            }
            MobilityModel::RicianPath {
                k_factor_db,
                mean_snr_db,
                motion,
            } => {
                let (bs, ue) = motion.angles_at(slot)?;
                let p = db_to_linear(*mean_snr_db);
                vec![Path {
                    gain: rician_gain(p, db_to_linear(*k_factor_db), self.los_phases[&0], rng),
                    bs_angle: bs,
                    ue_angle: ue,
                    mean_power: p,
                }]
            }
            MobilityModel::Trajectory {
                data,
                slot_duration_s,
                speed_m_per_s,
                k_los_db,
                k_nlos_db,
            } => {
                let position = data.samples()[0].position_m + speed_m_per_s * slot_duration_s * slot as f64;
                let paths = data
                    .interpolate(position)
                    .ok_or(AtscError::ChannelEnded { slot })?;
                paths
                    .into_iter()
                    .map(|tp| {
                        let p = db_to_linear(tp.gain_db);
                        let k = db_to_linear(if tp.los { *k_los_db } else { *k_nlos_db });
                        Path {
                            gain: rician_gain(p, k, self.los_phases[&tp.path_id], rng),
                            bs_angle: tp.bs_angle,
                            ue_angle: tp.ue_angle,
                            mean_power: p,
                        }
                    })
                    .collect()
            }
        };
        Ok(ChannelState { paths, slot })
    }
}
