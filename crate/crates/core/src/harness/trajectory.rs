//! Synthetic urban routes standing in for ray-traced path data.
//!
//! Plane geometry with the BS at the origin, its array along the x axis and
//! broadside towards +y, so the BS sin-angle of a departure direction is its x
//! component. The UE array is mounted at −45° to the heading. Path gains are
//! mean pre-beamforming SNRs: free-space loss at 28 GHz under a 30 dBm
//! transmitter and −99 dBm thermal noise with a 9.1 dB noise figure, plus an
//! excess loss per reflection.
//!
//! [`RouteProfile::NlosLosNlos`] follows an L-shaped street corner:
//!
//! - 0–40 m east along y = 15 m with the direct path blocked; a wall reflection
//!   carries the link;
//! - at 40 m the UE turns north at x = −15 m into line of sight (gain step of
//!   about 20 dB, angle jump), while the old reflection lingers for 4 m;
//! - a weak side-wall reflection accompanies the LOS path up to 350 m, where the
//!   UE turns west and the LOS path is blocked;
//! - a single reflection carries the link until 380 m, followed by short-lived
//!   seeded paths with erratic angles and fast-dropping gains to 410 m.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array::SinAngle;
use crate::channel::{MobilityModel, TrajectoryData, TrajectoryPath, TrajectorySample};
use crate::error::{AtscError, Result};

/// Mean SNR at 0 dB path loss: 30 dBm − (−99 dBm + 9.1 dB).
pub const TX_TO_NOISE_DB: f64 = 119.9;
pub const CARRIER_HZ: f64 = 28e9;
/// Spacing of the emitted samples along the route.
pub const SAMPLE_SPACING_M: f64 = 0.5;
pub const SLOT_DURATION_S: f64 = 0.5e-3;
pub const K_LOS_DB: f64 = 13.2;
pub const K_NLOS_DB: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteProfile {
    /// NLOS street, corner into LOS, blocked again with an erratic tail.
    NlosLosNlos,
    /// Straight LOS drive along x = −15 m, no blockage.
    LosOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedPreset {
    /// 4.7 km/h.
    Pedestrian,
    /// 20 km/h.
    Cyclist,
    /// 43.2 km/h.
    Urban,
    /// 72 km/h.
    Fast,
}

impl SpeedPreset {
    pub const ALL: [SpeedPreset; 4] = [SpeedPreset::Pedestrian, SpeedPreset::Cyclist, SpeedPreset::Urban, SpeedPreset::Fast];

    pub fn km_per_h(self) -> f64 {
        match self {
            SpeedPreset::Pedestrian => 4.7,
            SpeedPreset::Cyclist => 20.0,
            SpeedPreset::Urban => 43.2,
            SpeedPreset::Fast => 72.0,
        }
    }

    /// Preset whose speed matches `kmh` within 0.05 km/h.
    pub fn from_km_per_h(kmh: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|p| (p.km_per_h() - kmh).abs() < 0.05)
    }
}

pub fn km_per_h_to_m_per_s(kmh: f64) -> f64 {
    kmh / 3.6
}

/// Trajectory mobility model at constant speed with the LOS/NLOS K-factors.
pub fn trajectory_model(data: Arc<TrajectoryData>, speed_kmh: f64, slot_duration_s: f64) -> MobilityModel {
    MobilityModel::Trajectory {
        data,
        slot_duration_s,
        speed_m_per_s: km_per_h_to_m_per_s(speed_kmh),
        k_los_db: K_LOS_DB,
        k_nlos_db: K_NLOS_DB,
    }
}

type Point = (f64, f64);

fn sub(a: Point, b: Point) -> Point {
    (a.0 - b.0, a.1 - b.1)
}

fn norm(a: Point) -> f64 {
    a.0.hypot(a.1)
}

fn dot(a: Point, b: Point) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

pub fn free_space_loss_db(distance_m: f64) -> f64 {
    let wavelength = 299_792_458.0 / CARRIER_HZ;
    20.0 * (4.0 * std::f64::consts::PI * distance_m.max(1.0) / wavelength).log10()
}

/// Polyline route: position and unit heading at arc length `s`.
struct Route {
    waypoints: Vec<Point>,
}

impl Route {
    fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| norm(sub(w[1], w[0]))).sum()
    }

    fn at(&self, s: f64) -> (Point, Point) {
        let mut left = s;
        let last = self.waypoints.len() - 2;
        for (i, w) in self.waypoints.windows(2).enumerate() {
            let seg = sub(w[1], w[0]);
            let len = norm(seg);
            let heading = (seg.0 / len, seg.1 / len);
            if left < len || i == last {
                return ((w[0].0 + heading.0 * left, w[0].1 + heading.1 * left), heading);
            }
            left -= len;
        }
        unreachable!("route has at least one segment")
    }
}

/// UE array axis: heading rotated by −45°.
fn ue_axis(heading: Point) -> Point {
    let c = std::f64::consts::FRAC_1_SQRT_2;
    (c * (heading.0 + heading.1), c * (heading.1 - heading.0))
}

/// Path through a single bounce point `p` (the BS itself for the direct path).
fn path_via(id: u32, ue: Point, heading: Point, bounce: Option<Point>, excess_db: f64, los: bool) -> TrajectoryPath {
    let first = bounce.unwrap_or(ue);
    let length = norm(first) + bounce.map_or(0.0, |p| norm(sub(ue, p)));
    let towards = bounce.unwrap_or((0.0, 0.0));
    let arrival = sub(towards, ue);
    TrajectoryPath {
        path_id: id,
        bs_angle: SinAngle::clamped(first.0 / norm(first)),
        ue_angle: SinAngle::clamped(dot(arrival, ue_axis(heading)) / norm(arrival)),
        gain_db: TX_TO_NOISE_DB - free_space_loss_db(length) - excess_db,
        los,
    }
}

/// Bounce point on the wall `y = wall` for a UE at `ue` (BS image at `2·wall`).
fn bounce_on_horizontal(ue: Point, wall: f64) -> Point {
    let image = (0.0, 2.0 * wall);
    let t = (wall - ue.1) / (image.1 - ue.1);
    (ue.0 + t * (image.0 - ue.0), wall)
}

/// Bounce point on the wall `x = wall`.
fn bounce_on_vertical(ue: Point, wall: f64) -> Point {
    let image = (2.0 * wall, 0.0);
    let t = (wall - ue.0) / (image.0 - ue.0);
    (wall, ue.1 + t * (image.1 - ue.1))
}

/// A short-lived scatterer of the erratic tail.
struct Scatterer {
    id: u32,
    start: f64,
    end: f64,
    point: Point,
    excess_db: f64,
}

const CORNER_M: f64 = 40.0;
const LINGER_M: f64 = 4.0;
const BLOCKAGE_M: f64 = 350.0;
const TAIL_M: f64 = 380.0;

/// Route sampled every [`SAMPLE_SPACING_M`]; deterministic given `seed` (only
/// the erratic tail is random).
pub fn synth_trajectory(profile: RouteProfile, seed: u64) -> Result<TrajectoryData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let route = match profile {
        RouteProfile::NlosLosNlos => Route { waypoints: vec![(-55.0, 15.0), (-15.0, 15.0), (-15.0, 325.0), (-75.0, 325.0)] },
        RouteProfile::LosOnly => Route { waypoints: vec![(-15.0, 15.0), (-15.0, 425.0)] },
    };
    let length = route.length();

    let mut scatterers = Vec::new();
    if profile == RouteProfile::NlosLosNlos {
        let mut birth = TAIL_M - 1.0;
        let mut id = 10;
        while birth < length {
            let (ue, _) = route.at(birth);
            scatterers.push(Scatterer {
                id,
                start: birth,
                end: birth + rng.gen_range(15.0..30.0),
                point: (ue.0 + rng.gen_range(-30.0..30.0), ue.1 + rng.gen_range(25.0..80.0)),
                excess_db: rng.gen_range(18.0..24.0),
            });
            birth += rng.gen_range(8.0..12.0);
            id += 1;
        }
    }
    let jitter = Normal::new(0.0, 0.01).expect("valid deviation");
    let mut ue_offsets = vec![0.0; scatterers.len()];

    let count = (length / SAMPLE_SPACING_M).round() as usize;
    let mut samples = Vec::with_capacity(count + 1);
    for k in 0..=count {
        let s = (k as f64 * SAMPLE_SPACING_M).min(length);
        let (ue, heading) = route.at(s);
        let mut paths = Vec::new();
        match profile {
            RouteProfile::LosOnly => {
                paths.push(path_via(1, ue, heading, None, 0.0, true));
                paths.push(path_via(3, ue, heading, Some(bounce_on_vertical(ue, -30.0)), 20.0, false));
            }
            RouteProfile::NlosLosNlos => {
                if (CORNER_M..BLOCKAGE_M).contains(&s) {
                    paths.push(path_via(1, ue, heading, None, 0.0, true));
                    paths.push(path_via(3, ue, heading, Some(bounce_on_vertical(ue, -30.0)), 20.0, false));
                }
                if s <= CORNER_M + LINGER_M {
                    paths.push(path_via(2, ue, heading, Some(bounce_on_horizontal(ue, 45.0)), 15.0, false));
                }
                if (BLOCKAGE_M - 2.0..=TAIL_M).contains(&s) {
                    paths.push(path_via(4, ue, heading, Some(bounce_on_horizontal(ue, 340.0)), 18.0, false));
                }
                for (sc, offset) in scatterers.iter().zip(ue_offsets.iter_mut()) {
                    if s < sc.start || s > sc.end {
                        continue;
                    }
                    *offset += jitter.sample(&mut rng);
                    let mut p = path_via(sc.id, ue, heading, Some(sc.point), sc.excess_db + 0.3 * (s - TAIL_M).max(0.0), false);
                    p.ue_angle = SinAngle::clamped(p.ue_angle.value() + *offset);
                    paths.push(p);
                }
            }
        }
        samples.push(TrajectorySample { position_m: s, paths });
    }
    if samples.iter().any(|s| s.paths.is_empty()) {
        return Err(AtscError::Trajectory("synthetic route left a sample without paths".into()));
    }
    TrajectoryData::new(samples)
}
