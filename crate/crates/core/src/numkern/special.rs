//! Gaussian special functions and the truncated-normal ratio functions
//! `zeta1(a, b) = [phi(b) - phi(a)] / [Phi(b) - Phi(a)]` and
//! `zeta2(a, b) = [b phi(b) - a phi(a)] / [Phi(b) - Phi(a)]`.
//!
//! Interval masses are evaluated through upper-tail complements when both
//! endpoints are positive and through Mills ratios once both endpoints sit
//! more than [`TAIL_SWITCH`] standard deviations on the same side of zero, so
//! that masses far below `f64::MIN_POSITIVE` still produce finite ratios.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Beyond this many standard deviations the scaled (Mills-ratio) regime is used.
pub const TAIL_SWITCH: f64 = 5.0;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `x * phi(x)` with the limit convention `0` at `±∞`.
#[inline]
pub fn x_norm_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        x * norm_pdf(x)
    }
}

/// Log of the standard normal density.
#[inline]
pub fn log_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF `Phi(x)`.
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
    }
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// Mills ratio `R(x) = (1 - Phi(x)) / phi(x)`, accurate for every finite `x`
/// (for very negative `x` it grows like `1/phi(x)` and overflows eventually).
pub fn mills_ratio(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x < 26.0 {
        return norm_sf(x) / norm_pdf(x);
    }
    // Laplace continued fraction; converges in a handful of terms this far out.
    let mut tail = x;
    for k in (1..=40).rev() {
        tail = x + k as f64 / tail;
    }
    1.0 / tail
}

/// `log Phi(x)`, finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if x < -TAIL_SWITCH {
        log_norm_pdf(x) + mills_ratio(-x).ln()
    } else {
        norm_cdf(x).ln()
    }
}

/// Standard normal quantile `Phi^{-1}(p)`.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = Normal::standard().inverse_cdf(p);
    // One Newton polish against our own CDF.
    let pdf = norm_pdf(x);
    if pdf > 0.0 {
        x - (norm_cdf(x) - p) / pdf
    } else {
        x
    }
}

/// Everything the fitters need about a standard normal restricted to `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalStats {
    /// `log[Phi(b) - Phi(a)]`.
    pub log_mass: f64,
    pub zeta1: f64,
    pub zeta2: f64,
}

impl IntervalStats {
    /// Variance ratio `1 - zeta1^2 - zeta2` of the standardized truncated normal,
    /// kept inside `(0, 1]`.
    pub fn variance_ratio(&self) -> f64 {
        let v = 1.0 - self.zeta1 * self.zeta1 - self.zeta2;
        v.clamp(f64::MIN_POSITIVE, 1.0)
    }

    /// `Phi(b) - Phi(a)`; may underflow to zero where `log_mass` does not.
    pub fn mass(&self) -> f64 {
        self.log_mass.exp()
    }
}

/// Computes `log[Phi(b) - Phi(a)]`, `zeta1(a, b)` and `zeta2(a, b)` together.
pub fn interval_stats(a: f64, b: f64) -> Result<IntervalStats> {
    if a.is_nan() || b.is_nan() || a >= b {
        return Err(Error::Domain(format!("invalid interval [{a}, {b}]")));
    }
    // zeta1 is odd and zeta2 even under (a, b) -> (-b, -a); fold the upper tail
    // onto the lower one.
    if a >= TAIL_SWITCH {
        let s = lower_tail_stats(-b, -a);
        return Ok(IntervalStats { zeta1: -s.zeta1, ..s });
    }
    if b <= -TAIL_SWITCH {
        return Ok(lower_tail_stats(a, b));
    }
    let mass = if a > 0.0 {
        norm_sf(a) - norm_sf(b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    };
    let (pa, pb) = (norm_pdf(a), norm_pdf(b));
    Ok(IntervalStats {
        log_mass: mass.ln(),
        zeta1: (pb - pa) / mass,
        zeta2: (x_norm_pdf(b) - x_norm_pdf(a)) / mass,
    })
}

/// Scaled evaluation for `a < b <= -TAIL_SWITCH`.
///
/// With `s = -b`, `t = -a`: `Phi(b) = phi(b) R(s)` and
/// `Phi(a) = phi(b) r R(t)` where `r = phi(a) / phi(b)`.
fn lower_tail_stats(a: f64, b: f64) -> IntervalStats {
    let s = -b;
    let (r_mills_t, a_r) = if a == f64::NEG_INFINITY {
        (0.0, 0.0)
    } else {
        let t = -a;
        let r = (-0.5 * (t - s) * (t + s)).exp();
        (r * mills_ratio(t), a * r)
    };
    let scaled_mass = mills_ratio(s) - r_mills_t;
    let one_minus_r = if a == f64::NEG_INFINITY {
        1.0
    } else {
        -(-0.5 * (-a - s) * (-a + s)).exp_m1()
    };
    IntervalStats {
        log_mass: log_norm_pdf(b) + scaled_mass.ln(),
        zeta1: one_minus_r / scaled_mass,
        zeta2: (b - a_r) / scaled_mass,
    }
}

/// `zeta1(a, b) = [phi(b) - phi(a)] / [Phi(b) - Phi(a)]`.
pub fn zeta1(a: f64, b: f64) -> Result<f64> {
    interval_stats(a, b).map(|s| s.zeta1)
}

/// `zeta2(a, b) = [b phi(b) - a phi(a)] / [Phi(b) - Phi(a)]`.
pub fn zeta2(a: f64, b: f64) -> Result<f64> {
    interval_stats(a, b).map(|s| s.zeta2)
}

/// `log[Phi(b) - Phi(a)]`.
pub fn log_interval_mass(a: f64, b: f64) -> Result<f64> {
    interval_stats(a, b).map(|s| s.log_mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn cdf_reference_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert_eq!(norm_cdf(f64::INFINITY), 1.0);
        assert_eq!(norm_cdf(f64::NEG_INFINITY), 0.0);
        assert_relative_eq!(norm_cdf(1.959_963_984_540_054), 0.975, max_relative = 1e-14);
        // Phi(-8) from a 50-digit evaluation.
        assert_relative_eq!(norm_cdf(-8.0), 6.220_960_574_271_784e-16, max_relative = 1e-14);
        assert_relative_eq!(norm_cdf(-1.0), 0.158_655_253_931_457_05, max_relative = 1e-14);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-10, 0.01, 0.1, 0.5, 0.9, 0.975, 1.0 - 1e-9] {
            assert_relative_eq!(norm_cdf(norm_quantile(p)), p, max_relative = 1e-12);
        }
    }

    #[test]
    fn mills_ratio_matches_across_switch() {
        // The continued fraction and the direct ratio agree where both are valid.
        let direct = norm_sf(25.9) / norm_pdf(25.9);
        let mut tail = 25.9;
        for k in (1..=40).rev() {
            tail = 25.9 + k as f64 / tail;
        }
        assert_relative_eq!(direct, 1.0 / tail, max_relative = 1e-13);
        assert!(mills_ratio(1e3) > 0.0);
    }

    #[test]
    fn zeta_reference_values() {
        assert_relative_eq!(zeta1(-1.3, 1.3).unwrap(), 0.0, epsilon = 1e-16);
        assert_relative_eq!(zeta1(0.0, f64::INFINITY).unwrap(), -0.797_884_560_802_865_4, max_relative = 1e-14);
        assert_relative_eq!(zeta1(0.0, 1.0).unwrap(), -0.459_862_229_286_426_5, max_relative = 1e-13);
        assert_eq!(zeta2(f64::NEG_INFINITY, f64::INFINITY).unwrap(), 0.0);
        assert_eq!(zeta2(0.0, f64::INFINITY).unwrap(), 0.0);
        assert_relative_eq!(zeta2(0.0, 1.0).unwrap(), 0.708_874_905_227_206_8, max_relative = 1e-13);
    }

    #[test]
    fn invalid_intervals_are_rejected() {
        assert!(matches!(zeta1(1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(zeta2(2.0, 1.0), Err(Error::Domain(_))));
        assert!(interval_stats(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn far_tail_intervals_stay_finite() {
        for &(a, b) in &[(40.0, 41.0), (-1e3, -999.0), (60.0, f64::INFINITY), (f64::NEG_INFINITY, -80.0)] {
            let s = interval_stats(a, b).unwrap();
            assert!(s.log_mass.is_finite() && s.zeta1.is_finite() && s.zeta2.is_finite());
            let mean = -s.zeta1;
            assert!(mean > a && mean < b, "mean {mean} outside ({a}, {b})");
            assert!(s.variance_ratio() > 0.0 && s.variance_ratio() <= 1.0);
        }
    }

    #[test]
    fn tail_regime_is_continuous_at_switch() {
        let below = interval_stats(-TAIL_SWITCH - 1.0, -TAIL_SWITCH - 1e-12).unwrap();
        let above = interval_stats(-TAIL_SWITCH - 1.0, -TAIL_SWITCH + 1e-12).unwrap();
        assert_relative_eq!(below.zeta1, above.zeta1, max_relative = 1e-9);
        assert_relative_eq!(below.log_mass, above.log_mass, max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn cdf_symmetry(x in -8.0f64..8.0) {
            prop_assert!((norm_cdf(x) + norm_cdf(-x) - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn variance_ratio_in_unit_interval(a in -12.0f64..12.0, w in 1e-3f64..10.0) {
            let s = interval_stats(a, a + w).unwrap();
            let v = 1.0 - s.zeta1 * s.zeta1 - s.zeta2;
            prop_assert!(v > 0.0 && v <= 1.0, "variance ratio {}", v);
            prop_assert!(-s.zeta1 > a && -s.zeta1 < a + w);
        }

        #[test]
        fn zeta_reflection(a in -9.0f64..9.0, w in 1e-2f64..6.0) {
            let s = interval_stats(a, a + w).unwrap();
            let r = interval_stats(-a - w, -a).unwrap();
            prop_assert!((s.zeta1 + r.zeta1).abs() <= 1e-10 * (1.0 + s.zeta1.abs()));
            prop_assert!((s.zeta2 - r.zeta2).abs() <= 1e-10 * (1.0 + s.zeta2.abs()));
        }
    }
}
