//! Univariate truncated normal: interval type, moments and sampling.

use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use super::special::{interval_stats, norm_cdf, IntervalStats};
use crate::error::{Error, Result};

/// An open interval on the extended real line, `lower < upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "extended_real")]
    lower: f64,
    #[serde(with = "extended_real")]
    upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::Domain(format!("invalid interval [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }

    /// The whole real line.
    pub fn real_line() -> Self {
        Self { lower: f64::NEG_INFINITY, upper: f64::INFINITY }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    /// Standardizes the endpoints for a normal with the given location and scale.
    pub fn standardize(&self, location: f64, scale: f64) -> (f64, f64) {
        ((self.lower - location) / scale, (self.upper - location) / scale)
    }
}

/// Mean and variance of `N(location, scale^2)` truncated to `interval`.
pub fn tn_moments(interval: Interval, location: f64, scale: f64) -> Result<(f64, f64)> {
    check_scale(scale)?;
    let (a, b) = interval.standardize(location, scale);
    let stats = interval_stats(a, b)?;
    let mean = location - scale * stats.zeta1;
    let mean = mean.clamp(next_up(interval.lower), next_down(interval.upper));
    Ok((mean, scale * scale * stats.variance_ratio()))
}

/// Truncated mean together with the standardized interval statistics, so
/// callers can reuse `log_mass`, `zeta1` and `zeta2` without recomputing them.
pub(crate) fn tn_mean_stats(interval: Interval, location: f64, scale: f64) -> Result<(f64, IntervalStats)> {
    let (a, b) = interval.standardize(location, scale);
    let stats = interval_stats(a, b)?;
    let mean = (location - scale * stats.zeta1).clamp(next_up(interval.lower), next_down(interval.upper));
    Ok((mean, stats))
}

/// Draws one value from `N(location, scale^2)` truncated to `interval`.
///
/// Uses normal, uniform or translated-exponential rejection depending on
/// where the interval sits, so far-tail intervals cost O(1) expected draws.
pub fn tn_sample(interval: Interval, location: f64, scale: f64, rng: &mut RngStream) -> Result<f64> {
    check_scale(scale)?;
    let (a, b) = interval.standardize(location, scale);
    if a.is_nan() || b.is_nan() || a >= b {
        return Err(Error::Domain(format!("invalid standardized interval [{a}, {b}]")));
    }
    let u = standard_tn_sample(a, b, rng);
    let x = location + scale * u;
    // Rounding in the affine map can land exactly on an endpoint.
    Ok(x.clamp(next_up(interval.lower), next_down(interval.upper)))
}

/// Sample from the standard normal restricted to `(a, b)`.
pub(crate) fn standard_tn_sample(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return rng.standard_normal();
    }
    if a >= 0.0 {
        return positive_tn_sample(a, b, rng);
    }
    if b <= 0.0 {
        return -positive_tn_sample(-b, -a, rng);
    }
    // Interval straddles zero.
    let mass = norm_cdf(b) - norm_cdf(a);
    if mass > 0.3 {
        loop {
            let z = rng.standard_normal();
            if z > a && z < b {
                return z;
            }
        }
    }
    // Narrow interval around zero: uniform proposal, density bounded by phi(0).
    loop {
        let z = a + (b - a) * rng.uniform();
        if rng.uniform().ln() <= -0.5 * z * z {
            return z;
        }
    }
}

/// Sample from the standard normal restricted to `(a, b)` with `a >= 0`.
fn positive_tn_sample(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    if a < 0.5 && b - a > 1.0 {
        // Plain rejection has acceptance above ~0.24 here.
        loop {
            let z = rng.standard_normal().abs();
            if z > a && z < b {
                return z;
            }
        }
    }
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    // Switch between exponential and uniform proposals on which envelope is tighter.
    let exp_cutoff = a
        + 2.0 * 0.5_f64.exp() / (a + (a * a + 4.0).sqrt())
            * (0.25 * (a * a - a * (a * a + 4.0).sqrt())).exp();
    if b > exp_cutoff {
        loop {
            let z = a + rng.exponential() / lambda;
            if z >= b {
                continue;
            }
            if rng.uniform().ln() <= -0.5 * (z - lambda) * (z - lambda) {
                return z;
            }
        }
    }
    loop {
        let z = a + (b - a) * rng.uniform();
        if rng.uniform().ln() <= 0.5 * (a * a - z * z) {
            return z;
        }
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain(format!("scale must be positive and finite, got {scale}")));
    }
    Ok(())
}

fn next_up(x: f64) -> f64 {
    if x.is_infinite() {
        return x;
    }
    let bits = x.to_bits();
    if x == 0.0 {
        f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// `±∞` round-trip through JSON as the strings `"inf"` / `"-inf"`.
mod extended_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *x == f64::INFINITY {
            s.serialize_str("inf")
        } else if *x == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*x)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("not an extended real: {other}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn untruncated_moments() {
        let (m, v) = tn_moments(Interval::real_line(), 3.2, 1.5).unwrap();
        assert_eq!(m, 3.2);
        assert_relative_eq!(v, 2.25, max_relative = 1e-15);
    }

    #[test]
    fn half_normal_moments() {
        let (m, v) = tn_moments(Interval::new(0.0, f64::INFINITY).unwrap(), 0.0, 1.0).unwrap();
        assert_relative_eq!(m, 0.797_884_560_802_865_4, max_relative = 1e-14);
        assert_relative_eq!(v, 0.363_380_227_632_418_7, max_relative = 1e-13);
    }

    #[test]
    fn symmetric_truncation_has_zero_mean() {
        let (m, v) = tn_moments(Interval::new(-0.7, 0.7).unwrap(), 0.0, 2.0).unwrap();
        assert!(m.abs() < 1e-15);
        assert!(v > 0.0 && v < 4.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(Interval::new(1.0, 1.0).is_err());
        assert!(Interval::new(f64::NAN, 1.0).is_err());
        let i = Interval::new(0.0, 1.0).unwrap();
        assert!(tn_moments(i, 0.0, 0.0).is_err());
        let mut rng = RngStream::new(1, 0);
        assert!(tn_sample(i, 0.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn samples_respect_support() {
        let mut rng = RngStream::new(42, 0);
        let cases = [(0.0, 1.0), (5.0, f64::INFINITY), (f64::NEG_INFINITY, -30.0), (-0.01, 0.02), (8.0, 8.001), (0.2, 3.0)];
        for &(lo, hi) in &cases {
            let i = Interval::new(lo, hi).unwrap();
            for _ in 0..2_000 {
                let x = tn_sample(i, 0.0, 1.0, &mut rng).unwrap();
                assert!(i.contains(x) && x.is_finite(), "{x} outside ({lo}, {hi})");
            }
        }
    }

    #[test]
    fn far_tail_sampling_terminates() {
        let mut rng = RngStream::new(7, 1);
        let i = Interval::new(40.0, f64::INFINITY).unwrap();
        let mean = (0..10_000).map(|_| tn_sample(i, 0.0, 1.0, &mut rng).unwrap()).sum::<f64>() / 1e4;
        let (m, _) = tn_moments(i, 0.0, 1.0).unwrap();
        assert!((mean - m).abs() < 1e-3, "{mean} vs {m}");
    }

    #[test]
    fn half_normal_sample_mean() {
        let mut rng = RngStream::new(2024, 0);
        let i = Interval::new(0.0, f64::INFINITY).unwrap();
        let m = 1_000_000;
        let mean = (0..m).map(|_| tn_sample(i, 0.0, 1.0, &mut rng).unwrap()).sum::<f64>() / m as f64;
        assert!((mean - 0.797_884_560_802_865_4).abs() < 0.002, "{mean}");
    }

    #[test]
    fn interval_json_handles_infinity() {
        let i = Interval::new(f64::NEG_INFINITY, 1.5).unwrap();
        let s = serde_json::to_string(&i).unwrap();
        assert_eq!(s, r#"{"lower":"-inf","upper":1.5}"#);
        let back: Interval = serde_json::from_str(&s).unwrap();
        assert_eq!(back, i);
    }
}
