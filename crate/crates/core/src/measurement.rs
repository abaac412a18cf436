//! Matched-filter tracking statistics.
//!
//! Each sampling beam yields `Q = 2/(σ²‖s‖²)·|s†y|²` with `y = h·s + z`, which is
//! non-central χ² with two degrees of freedom and non-centrality
//! `η = 2nP_T|h|²/σ²`. The default sampler draws that distribution directly; the
//! signal-level path (`sample_pair_signal_level`) builds pilots and noise and is
//! kept as a cross-check.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AtscError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    /// Pilot length `n` in symbols.
    pub length: usize,
    pub tx_power: f64,
    pub noise_var: f64,
}

impl PilotConfig {
    pub fn new(length: usize) -> Self {
        Self {
            length,
            tx_power: 1.0,
            noise_var: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(AtscError::InvalidConfig("pilot length must be positive".into()));
        }
        if !(self.tx_power > 0.0 && self.noise_var > 0.0) {
            return Err(AtscError::InvalidConfig(format!(
                "tx power and noise variance must be positive (got {}, {})",
                self.tx_power, self.noise_var
            )));
        }
        Ok(())
    }

    /// Matched-filter output SNR `n·P_T·|h|²/σ²` of an `n`-symbol pilot.
    pub fn matched_filter_snr(&self, effective_gain_sq: f64) -> f64 {
        self.length as f64 * self.tx_power * effective_gain_sq / self.noise_var
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementPair {
    pub q_plus: f64,
    pub q_minus: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
}

impl MeasurementPair {
    /// The noiseless limit: each statistic replaced by its mean `2 + η`.
    pub fn expected(eta_plus: f64, eta_minus: f64) -> Self {
        Self {
            q_plus: 2.0 + eta_plus,
            q_minus: 2.0 + eta_minus,
            eta_plus,
            eta_minus,
        }
    }

    pub fn difference(&self) -> f64 {
        self.q_plus - self.q_minus
    }
}

/// `η = 2·n·P_T·|h|²/σ²`.
pub fn noncentrality(pilot: &PilotConfig, effective_gain_sq: f64) -> f64 {
    2.0 * pilot.matched_filter_snr(effective_gain_sq)
}

/// One draw of non-central χ²₂(η): `(√η + x)² + y²` with `x, y ~ N(0, 1)`.
#[inline]
pub fn sample_noncentral_chi2<R: Rng + ?Sized>(eta: f64, rng: &mut R) -> f64 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let m = eta.max(0.0).sqrt() + x;
    m * m + y * y
}

/// Draws `Q⁺`, `Q⁻` independently for the effective channels of the two
/// sampling beams.
pub fn sample_pair<R: Rng + ?Sized>(pilot: &PilotConfig, h_plus: Complex64, h_minus: Complex64, rng: &mut R) -> MeasurementPair {
    let eta_plus = noncentrality(pilot, h_plus.norm_sqr());
    let eta_minus = noncentrality(pilot, h_minus.norm_sqr());
    MeasurementPair {
        q_plus: sample_noncentral_chi2(eta_plus, rng),
        q_minus: sample_noncentral_chi2(eta_minus, rng),
        eta_plus,
        eta_minus,
    }
}

/// Matched-filter statistic from an explicit pilot and noise realisation.
fn signal_level_statistic<R: Rng + ?Sized>(pilot: &PilotConfig, pilots: &[Complex64], h: Complex64, rng: &mut R) -> f64 {
    let noise_scale = (pilot.noise_var / 2.0).sqrt();
    let energy: f64 = pilots.iter().map(|s| s.norm_sqr()).sum();
    let mut corr = Complex64::new(0.0, 0.0);
    for s in pilots {
        let z = Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * noise_scale;
        let y = h * s + z;
        corr += s.conj() * y;
    }
    2.0 / (pilot.noise_var * energy) * corr.norm_sqr()
}

/// Same distribution as [`sample_pair`], obtained by simulating `y = h·s + z`
/// with unit-modulus random-phase pilots scaled to `‖s‖² = n·P_T`.
pub fn sample_pair_signal_level<R: Rng + ?Sized>(pilot: &PilotConfig, h_plus: Complex64, h_minus: Complex64, rng: &mut R) -> MeasurementPair {
    let amp = pilot.tx_power.sqrt();
    let pilots: Vec<Complex64> = (0..pilot.length)
        .map(|_| Complex64::from_polar(amp, rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    MeasurementPair {
        q_plus: signal_level_statistic(pilot, &pilots, h_plus, rng),
        q_minus: signal_level_statistic(pilot, &pilots, h_minus, rng),
        eta_plus: noncentrality(pilot, h_plus.norm_sqr()),
        eta_minus: noncentrality(pilot, h_minus.norm_sqr()),
    }
}

/// `w† H f` for an explicit `N_R × N_T` channel matrix.
pub fn effective_channel(h: &Array2<Complex64>, w: &[Complex64], f: &[Complex64]) -> Complex64 {
    let (nr, nt) = h.dim();
    assert_eq!(w.len(), nr, "UE beamformer length must match channel rows");
    assert_eq!(f.len(), nt, "BS beamformer length must match channel columns");
    h.outer_iter()
        .zip(w)
        .map(|(row, wr)| {
            let hf: Complex64 = row.iter().zip(f).map(|(a, b)| a * b).sum();
            wr.conj() * hf
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{beamformer, gain, ArrayConfig, SinAngle};
    use crate::channel::{channel_matrix, ArrayPair, ChannelState, Path};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noncentrality_values() {
        let p = PilotConfig::new(16);
        assert_eq!(noncentrality(&p, 0.0), 0.0);
        assert_relative_eq!(noncentrality(&p, 0.1 * 64.0), 204.8, epsilon = 1e-9);
        let p32 = PilotConfig::new(32);
        assert_relative_eq!(noncentrality(&p32, 0.3), 2.0 * noncentrality(&p, 0.3));
    }

    #[test]
    fn pilot_validation() {
        assert!(PilotConfig::new(0).validate().is_err());
        assert!(PilotConfig { noise_var: 0.0, ..PilotConfig::new(4) }.validate().is_err());
        assert!(PilotConfig::new(4).validate().is_ok());
    }

    #[test]
    fn central_case_mean_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = PilotConfig::new(16);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let m = sample_pair(&p, Complex64::default(), Complex64::default(), &mut rng);
            sum += m.q_plus + m.q_minus;
        }
        let mean = sum / (2 * n) as f64;
        assert!((mean - 2.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn pair_components_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = PilotConfig::new(16);
        let h = Complex64::new(0.3, 0.1);
        let n = 100_000;
        let draws: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let m = sample_pair(&p, h, h, &mut rng);
                (m.q_plus, m.q_minus)
            })
            .collect();
        let mx = draws.iter().map(|d| d.0).sum::<f64>() / n as f64;
        let my = draws.iter().map(|d| d.1).sum::<f64>() / n as f64;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in &draws {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx).powi(2);
            syy += (y - my).powi(2);
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!(corr.abs() < 0.02, "corr {corr}");
    }

    #[test]
    fn effective_channel_matched_and_zero() {
        let arrays = ArrayPair::new(ArrayConfig::new(8).unwrap(), ArrayConfig::new(4).unwrap());
        let (psi, phi) = (SinAngle::new(0.3).unwrap(), SinAngle::new(-0.1).unwrap());
        let g = Complex64::new(0.2, -0.1);
        let state = ChannelState {
            paths: vec![Path { gain: g, bs_angle: psi, ue_angle: phi, mean_power: g.norm_sqr() }],
            slot: 0,
        };
        let h = channel_matrix(&arrays, &state);
        let w = beamformer(&arrays.ue, phi);
        let f = beamformer(&arrays.bs, psi);
        assert_relative_eq!(effective_channel(&h, &w, &f).norm_sqr(), g.norm_sqr() * 32.0, epsilon = 1e-12);
        let zero = Array2::<Complex64>::zeros((4, 8));
        assert_eq!(effective_channel(&zero, &w, &f), Complex64::default());
    }

    #[test]
    fn effective_channel_factored_form() {
        let arrays = ArrayPair::new(ArrayConfig::new(32).unwrap(), ArrayConfig::new(16).unwrap());
        let (psi, phi) = (0.21, -0.4);
        let g = Complex64::new(0.05, 0.02);
        let state = ChannelState {
            paths: vec![Path {
                gain: g,
                bs_angle: SinAngle::new(psi).unwrap(),
                ue_angle: SinAngle::new(phi).unwrap(),
                mean_power: g.norm_sqr(),
            }],
            slot: 0,
        };
        let h = channel_matrix(&arrays, &state);
        let (e_r, e_t, delta) = (0.013, -0.02, 1.0 / 32.0);
        let w = beamformer(&arrays.ue, SinAngle::new(phi + e_r).unwrap());
        for sign in [1.0, -1.0] {
            let beam = SinAngle::new(psi + e_t + sign * delta).unwrap();
            let f = beamformer(&arrays.bs, beam);
            let direct = effective_channel(&h, &w, &f).norm_sqr();
            let factored = g.norm_sqr() * gain(&arrays.ue, e_r) * gain(&arrays.bs, e_t + sign * delta);
            assert!((direct - factored).abs() <= 1e-10 * factored.max(1e-12), "{direct} vs {factored}");
            let fast = state.beamformed(&arrays, beam, SinAngle::new(phi + e_r).unwrap());
            let direct_c = effective_channel(&h, &w, &f);
            assert_relative_eq!(fast.re, direct_c.re, epsilon = 1e-12);
            assert_relative_eq!(fast.im, direct_c.im, epsilon = 1e-12);
        }
    }
}
