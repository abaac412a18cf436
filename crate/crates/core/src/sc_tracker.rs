//! Stochastic-control beam update for one side of the link.
//!
//! Two sampling beams at `Ψ ± Δ` produce `Q⁺`, `Q⁻`. The drift
//! `δ·(Q⁺ − Q⁻)/Γ` is truncated to `±B` and added to the data-beam direction.
//! `Γ` is the post-beamforming SNR of the data beam before the measurements; it
//! is supplied by the caller.

use serde::{Deserialize, Serialize};

use crate::array::SinAngle;
use crate::error::{AtscError, Result};
use crate::measurement::{MeasurementPair, PilotConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    /// Sampling-beam perturbation `Δ` (sin-domain).
    pub perturb: f64,
    /// Step size `δ` of the linear drift.
    pub step: f64,
    pub pilot: PilotConfig,
    /// Half beam width `B`; also the truncation bound.
    pub half_beam: f64,
}

impl TrackerParams {
    /// `Δ = B`, `δ = B/4`.
    pub fn recommended(half_beam: f64, pilot: PilotConfig) -> Self {
        Self {
            perturb: half_beam,
            step: half_beam / 4.0,
            pilot,
            half_beam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.perturb > 0.0 && self.step > 0.0 && self.half_beam > 0.0) {
            return Err(AtscError::InvalidConfig(format!(
                "Δ, δ and B must be positive (got {}, {}, {})",
                self.perturb, self.step, self.half_beam
            )));
        }
        self.pilot.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BeamState {
    pub direction: SinAngle,
}

impl BeamState {
    pub fn new(direction: SinAngle) -> Self {
        Self { direction }
    }
}

/// `(Ψ + Δ, Ψ − Δ)`, each clamped to the sin-domain.
pub fn sampling_directions(state: &BeamState, params: &TrackerParams) -> (SinAngle, SinAngle) {
    (
        state.direction.offset(params.perturb),
        state.direction.offset(-params.perturb),
    )
}

/// Linear drift `δ·(Q⁺ − Q⁻)/Γ`.
pub fn drift(pair: &MeasurementPair, gamma_ref: f64, params: &TrackerParams) -> Result<f64> {
    if !(gamma_ref > 0.0) {
        return Err(AtscError::InvalidReference(gamma_ref));
    }
    Ok(params.step * pair.difference() / gamma_ref)
}

/// `sign(x)·min(|x|, B)`.
#[inline]
pub fn truncate(raw_drift: f64, params: &TrackerParams) -> f64 {
    raw_drift.clamp(-params.half_beam, params.half_beam)
}

pub fn update(state: &BeamState, pair: &MeasurementPair, gamma_ref: f64, params: &TrackerParams) -> Result<BeamState> {
    let step = truncate(drift(pair, gamma_ref, params)?, params);
    Ok(BeamState::new(state.direction.offset(step)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{gain, ArrayConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const B: f64 = 1.0 / 64.0;

    fn params(perturb: f64, step: f64) -> TrackerParams {
        TrackerParams {
            perturb,
            step,
            pilot: PilotConfig::new(16),
            half_beam: B,
        }
    }

    fn pair(qp: f64, qm: f64) -> MeasurementPair {
        MeasurementPair {
            q_plus: qp,
            q_minus: qm,
            eta_plus: 0.0,
            eta_minus: 0.0,
        }
    }

    #[test]
    fn sampling_directions_basic_and_clamped() {
        let p = params(B, B / 4.0);
        let (a, b) = sampling_directions(&BeamState::new(SinAngle::new(0.0).unwrap()), &p);
        assert_relative_eq!(a.value(), B);
        assert_relative_eq!(b.value(), -B);

        let p = params(0.02, B / 4.0);
        let (a, b) = sampling_directions(&BeamState::new(SinAngle::new(0.99).unwrap()), &p);
        assert_eq!(a.value(), 1.0);
        assert_relative_eq!(b.value(), 0.97, epsilon = 1e-12);

        let p = TrackerParams { perturb: 0.0, ..params(B, B) };
        let s = BeamState::new(SinAngle::new(0.3).unwrap());
        let (a, b) = sampling_directions(&s, &p);
        assert_eq!(a, s.direction);
        assert_eq!(b, s.direction);
    }

    #[test]
    fn drift_arithmetic() {
        let p = params(B, 1.0 / 256.0);
        assert_eq!(drift(&pair(7.0, 7.0), 10.0, &p).unwrap(), 0.0);
        let d = drift(&pair(0.0, 100.0), 204.8, &p).unwrap();
        assert_relative_eq!(d, -100.0 / (256.0 * 204.8), epsilon = 1e-15);
        assert_relative_eq!(d, -1.907e-3, epsilon = 1e-6);
    }

    #[test]
    fn non_positive_reference_is_an_error() {
        let p = params(B, B / 4.0);
        assert!(matches!(drift(&pair(1.0, 0.0), 0.0, &p), Err(AtscError::InvalidReference(_))));
        assert!(drift(&pair(1.0, 0.0), -3.0, &p).is_err());
        assert!(drift(&pair(1.0, 0.0), f64::NAN, &p).is_err());
    }

    #[test]
    fn truncation() {
        let p = params(B, B / 4.0);
        assert_eq!(truncate(-3.0 * B, &p), -B);
        assert_relative_eq!(truncate(0.4 * B, &p), 0.4 * B);
        assert_eq!(truncate(0.0, &p), 0.0);
    }

    #[test]
    fn symmetric_measurements_leave_beam_unchanged() {
        let p = params(B, B / 4.0);
        let s = BeamState::new(SinAngle::new(-0.2).unwrap());
        assert_eq!(update(&s, &pair(42.0, 42.0), 3.0, &p).unwrap(), s);
    }

    #[test]
    fn noiseless_drift_through_origin_and_sign() {
        let cfg = ArrayConfig::new(64).unwrap();
        let p = params(B, B / 4.0);
        let two_n_gamma = 2.0 * 16.0 * 0.1;
        let mean_drift = |eps: f64| {
            let m = MeasurementPair::expected(two_n_gamma * gain(&cfg, eps + B), two_n_gamma * gain(&cfg, eps - B));
            let gamma = 16.0 * 0.1 * gain(&cfg, eps);
            drift(&m, gamma, &p).unwrap()
        };
        assert!(mean_drift(0.0).abs() < 1e-12);
        for k in 1..=20 {
            let eps = B * k as f64 / 20.0;
            assert!(mean_drift(eps) < 0.0, "eps={eps}");
            assert!(mean_drift(-eps) > 0.0, "eps={eps}");
        }
    }

    proptest! {
        #[test]
        fn update_never_moves_more_than_b(
            dir in -1.0f64..=1.0,
            qp in 0.0f64..1e4,
            qm in 0.0f64..1e4,
            gamma in 1e-3f64..1e4,
        ) {
            let p = params(B, B / 4.0);
            let s = BeamState::new(SinAngle::new(dir).unwrap());
            let next = update(&s, &pair(qp, qm), gamma, &p).unwrap();
            prop_assert!((next.direction.value() - dir).abs() <= B + 1e-15);
        }

        #[test]
        fn drift_is_odd_in_measurement_swap(qp in 0.0f64..1e3, qm in 0.0f64..1e3, gamma in 1e-2f64..1e3) {
            let p = params(B, B / 4.0);
            let a = drift(&pair(qp, qm), gamma, &p).unwrap();
            let b = drift(&pair(qm, qp), gamma, &p).unwrap();
            prop_assert_eq!(a, -b);
        }
    }
}
