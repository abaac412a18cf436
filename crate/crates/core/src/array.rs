//! Uniform linear array response, beamformers and the beamforming-gain kernel.
//!
//! All angles are carried in the sin-domain (`sin` of the physical angle). For a
//! ULA the phase progression across elements is linear in that quantity, so the
//! gain of a beam pointed at `Ψ` towards a path at `ψ` depends only on `Ψ - ψ`.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{AtscError, Result};

/// Below this magnitude of `sin(π·(d/λ)·ε)` the kernel is evaluated through its
/// series expansion around the removable singularity.
const SINGULARITY_THRESHOLD: f64 = 1e-9;

/// Relative distance of `Nθ` from a multiple of π treated as an exact null.
const NULL_TOLERANCE: f64 = 1e-13;

/// Geometry of a uniform linear array with isotropic elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    num_elements: usize,
    spacing_ratio: f64,
}

impl ArrayConfig {
    /// Half-wavelength spaced array with `num_elements` elements.
    pub fn new(num_elements: usize) -> Result<Self> {
        Self::with_spacing(num_elements, 0.5)
    }

    pub fn with_spacing(num_elements: usize, spacing_ratio: f64) -> Result<Self> {
        if num_elements == 0 {
            return Err(AtscError::InvalidConfig(
                "array needs at least one element".into(),
            ));
        }
        if !(spacing_ratio.is_finite() && spacing_ratio > 0.0) {
            return Err(AtscError::InvalidConfig(format!(
                "spacing ratio d/λ must be positive, got {spacing_ratio}"
            )));
        }
        Ok(Self {
            num_elements,
            spacing_ratio,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn spacing_ratio(&self) -> f64 {
        self.spacing_ratio
    }

    /// Half beam width `B = 1/N` in the sin-domain.
    pub fn half_beam_width(&self) -> f64 {
        1.0 / self.num_elements as f64
    }

    /// Centres of the `N` DFT beams, spaced `2B` apart and tiling `[-1, 1)`.
    pub fn codebook(&self) -> Vec<SinAngle> {
        let n = self.num_elements;
        let b = self.half_beam_width();
        (0..n)
            .map(|k| SinAngle::clamped(-1.0 + b + 2.0 * b * k as f64))
            .collect()
    }
}

/// Sin of a physical angle; always within `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SinAngle(f64);

impl SinAngle {
    pub const MAX: SinAngle = SinAngle(1.0);
    pub const MIN: SinAngle = SinAngle(-1.0);

    /// Rejects values outside `[-1, 1]` and NaN.
    pub fn new(value: f64) -> Result<Self> {
        if (-1.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(AtscError::AngleOutOfRange(value))
        }
    }

    /// Saturates at the sin-domain boundary. NaN maps to 0.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Self(0.0)
        } else {
            Self(value.clamp(-1.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `self + delta`, saturating at `±1`.
    pub fn offset(self, delta: f64) -> Self {
        Self::clamped(self.0 + delta)
    }
}

impl TryFrom<f64> for SinAngle {
    type Error = AtscError;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<SinAngle> for f64 {
    fn from(a: SinAngle) -> f64 {
        a.0
    }
}

impl fmt::Display for SinAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Unnormalised array response: element `k` is `exp(-j·2π·(d/λ)·k·angle)`.
pub fn steering_vector(cfg: &ArrayConfig, angle: SinAngle) -> Vec<Complex64> {
    let phase_step = -2.0 * PI * cfg.spacing_ratio * angle.value();
    (0..cfg.num_elements)
        .map(|k| Complex64::from_polar(1.0, phase_step * k as f64))
        .collect()
}

/// Unit-norm analog beamformer pointing at `direction`.
pub fn beamformer(cfg: &ArrayConfig, direction: SinAngle) -> Vec<Complex64> {
    let scale = 1.0 / (cfg.num_elements as f64).sqrt();
    steering_vector(cfg, direction)
        .into_iter()
        .map(|x| x * scale)
        .collect()
}

/// Beamforming gain `|v†(ψ) f(Ψ)|²` as a function of the sin-domain error
/// `ε = Ψ - ψ`, evaluated through the Dirichlet kernel
/// `sin²(πN(d/λ)ε) / (N sin²(π(d/λ)ε))`.
pub fn gain(cfg: &ArrayConfig, error: f64) -> f64 {
    let n = cfg.num_elements as f64;
    let theta = PI * cfg.spacing_ratio * error;
    let s = theta.sin();
    if s.abs() < SINGULARITY_THRESHOLD {
        // θ = mπ + u with small u: (sin Nθ / (N sin θ))² ≈ 1 - (N² - 1)u²/3
        let u = theta - (theta / PI).round() * PI;
        return n * (1.0 - (n * n - 1.0) * u * u / 3.0);
    }
    let phase = n * theta;
    let turns = (phase / PI).round();
    if (phase - turns * PI).abs() <= NULL_TOLERANCE * phase.abs().max(1.0) {
        // Nθ on a multiple of π away from a grating lobe: a pattern null.
        return 0.0;
    }
    let num = phase.sin();
    num * num / (n * s * s)
}

/// Complex array factor `(1/√N) Σ_k exp(-j·2π·(d/λ)·k·x)`.
///
/// With `x = Ψ - ψ` this is `v†(ψ) f(Ψ)` (BS side); with `x = φ - Φ` it is
/// `w†(Φ) u(φ)` (UE side). `|array_factor(x)|² == gain(x)`.
pub fn array_factor(cfg: &ArrayConfig, x: f64) -> Complex64 {
    let n = cfg.num_elements as f64;
    let theta = PI * cfg.spacing_ratio * x;
    let s = theta.sin();
    let ratio = if s.abs() < SINGULARITY_THRESHOLD {
        let m = (theta / PI).round();
        let u = theta - m * PI;
        // (-1)^{m(N-1)} accounts for the sign flip of sin(Nθ)/sin(θ) at θ = mπ.
        let sign = if (m as i64 * (cfg.num_elements as i64 - 1)).rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        };
        sign * n * (1.0 - (n * n - 1.0) * u * u / 6.0)
    } else {
        (n * theta).sin() / s
    };
    Complex64::from_polar(ratio / n.sqrt(), -theta * (n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn inner_product_gain(cfg: &ArrayConfig, error: f64) -> f64 {
        // |v†(ψ) f(Ψ)|² with ψ = 0 so that Ψ = error; the angle may leave [-1,1]
        // here, so build the vectors by hand instead of through SinAngle.
        let n = cfg.num_elements();
        let d = cfg.spacing_ratio();
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..n {
            let f = Complex64::from_polar(1.0 / (n as f64).sqrt(), -2.0 * PI * d * k as f64 * error);
            acc += f; // v(0) is all ones
        }
        acc.norm_sqr()
    }

    #[test]
    fn steering_vector_broadside_is_all_ones() {
        let cfg = ArrayConfig::new(4).unwrap();
        for x in steering_vector(&cfg, SinAngle::new(0.0).unwrap()) {
            assert_relative_eq!(x.re, 1.0);
            assert_relative_eq!(x.im, 0.0);
        }
    }

    #[test]
    fn steering_vector_endfire_two_elements() {
        let cfg = ArrayConfig::new(2).unwrap();
        let v = steering_vector(&cfg, SinAngle::new(1.0).unwrap());
        assert_relative_eq!(v[0].re, 1.0);
        assert_relative_eq!(v[1].re, -1.0, epsilon = 1e-12);
        assert!(v[1].im.abs() < 1e-12);
    }

    #[test]
    fn steering_vector_norm_is_n() {
        let cfg = ArrayConfig::new(64).unwrap();
        let v = steering_vector(&cfg, SinAngle::new(0.25).unwrap());
        let norm2: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        assert_relative_eq!(norm2, 64.0, epsilon = 1e-10);
    }

    #[test]
    fn beamformer_is_unit_norm_and_matched() {
        let cfg = ArrayConfig::new(4).unwrap();
        for x in beamformer(&cfg, SinAngle::new(0.0).unwrap()) {
            assert_relative_eq!(x.re, 0.5);
        }
        let cfg = ArrayConfig::new(37).unwrap();
        let dir = SinAngle::new(-0.31).unwrap();
        let f = beamformer(&cfg, dir);
        let v = steering_vector(&cfg, dir);
        let norm2: f64 = f.iter().map(|x| x.norm_sqr()).sum();
        assert_relative_eq!(norm2, 1.0, epsilon = 1e-12);
        let ip: Complex64 = v.iter().zip(&f).map(|(a, b)| a.conj() * b).sum();
        assert_relative_eq!(ip.norm_sqr(), 37.0, epsilon = 1e-9);
    }

    #[test]
    fn gain_landmarks() {
        let cfg = ArrayConfig::new(64).unwrap();
        let b = cfg.half_beam_width();
        assert_eq!(b, 1.0 / 64.0);
        assert_relative_eq!(gain(&cfg, 0.0), 64.0);
        assert_eq!(gain(&cfg, 2.0 * b), 0.0);
        assert_eq!(gain(&cfg, -6.0 * b), 0.0);
        let db = 10.0 * (gain(&cfg, b) / 64.0).log10();
        assert!((db + 3.92).abs() < 0.01, "got {db}");
    }

    #[test]
    fn gain_at_grating_singularity_uses_limit() {
        let cfg = ArrayConfig::new(8).unwrap();
        // d/λ = 0.5 and ε = 2 puts θ exactly at π.
        assert_relative_eq!(gain(&cfg, 2.0), 8.0, epsilon = 1e-9);
        assert_relative_eq!(gain(&cfg, 2.0 - 1e-12), 8.0, epsilon = 1e-9);
        assert_relative_eq!(array_factor(&cfg, 2.0).norm_sqr(), 8.0, epsilon = 1e-9);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ArrayConfig::new(0).is_err());
        assert!(ArrayConfig::with_spacing(4, 0.0).is_err());
        assert!(ArrayConfig::with_spacing(4, f64::NAN).is_err());
    }

    #[test]
    fn sin_angle_bounds() {
        assert!(SinAngle::new(1.0001).is_err());
        assert!(SinAngle::new(f64::NAN).is_err());
        assert_eq!(SinAngle::clamped(3.0).value(), 1.0);
        assert_eq!(SinAngle::new(0.99).unwrap().offset(0.02).value(), 1.0);
    }

    #[test]
    fn codebook_spacing() {
        let cfg = ArrayConfig::new(32).unwrap();
        let cb = cfg.codebook();
        assert_eq!(cb.len(), 32);
        assert_relative_eq!(cb[1].value() - cb[0].value(), 2.0 / 32.0, epsilon = 1e-12);
        assert_relative_eq!(cb[0].value(), -1.0 + 1.0 / 32.0);
    }

    #[test]
    fn relative_error_scaling() {
        let c32 = ArrayConfig::new(32).unwrap();
        let c64 = ArrayConfig::new(64).unwrap();
        for x in [0.1, 0.5, 1.0, 1.5, 2.7] {
            let a = gain(&c32, x / 32.0) / 32.0;
            let b = gain(&c64, x / 64.0) / 64.0;
            assert!((a - b).abs() < 2e-3, "x={x}: {a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn closed_form_matches_inner_product(n in 1usize..=256, eps in -2.0f64..=2.0) {
            let cfg = ArrayConfig::new(n).unwrap();
            let closed = gain(&cfg, eps);
            let direct = inner_product_gain(&cfg, eps);
            let scale = direct.max(1e-6 * n as f64);
            prop_assert!((closed - direct).abs() <= 1e-10 * scale.max(1.0),
                "n={} eps={} closed={} direct={}", n, eps, closed, direct);
        }

        #[test]
        fn gain_is_even_and_bounded(n in 1usize..=256, eps in -2.0f64..=2.0) {
            let cfg = ArrayConfig::new(n).unwrap();
            let g = gain(&cfg, eps);
            prop_assert!((g - gain(&cfg, -eps)).abs() <= 1e-9 * n as f64);
            prop_assert!(g <= n as f64 * (1.0 + 1e-12));
            prop_assert!(g >= 0.0);
        }

        #[test]
        fn array_factor_magnitude_is_gain(n in 1usize..=128, x in -2.0f64..=2.0) {
            let cfg = ArrayConfig::new(n).unwrap();
            let af = array_factor(&cfg, x);
            prop_assert!((af.norm_sqr() - gain(&cfg, x)).abs() <= 1e-9 * n as f64);
        }
    }

    #[test]
    fn array_factor_matches_explicit_products() {
        let cfg = ArrayConfig::new(16).unwrap();
        let path = SinAngle::new(0.2).unwrap();
        let beam = SinAngle::new(0.23).unwrap();
        let v = steering_vector(&cfg, path);
        let f = beamformer(&cfg, beam);
        let vf: Complex64 = v.iter().zip(&f).map(|(a, b)| a.conj() * b).sum();
        let af = array_factor(&cfg, beam.value() - path.value());
        assert_relative_eq!(vf.re, af.re, epsilon = 1e-12);
        assert_relative_eq!(vf.im, af.im, epsilon = 1e-12);
    }
}
