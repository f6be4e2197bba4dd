//! Helpers shared by the integration tests: adaptive Gauss-Kronrod quadrature
//! and a generator of small random problems.
#![allow(dead_code)]

use cumprobit::numkern::RngStream;
use cumprobit::simbench::{gen_dataset, SimConfig};
use cumprobit::{GaussianPrior, OrdinalDataset, Thresholds};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let s = f(c - h * XGK[j]) + f(c + h * XGK[j]);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (h * k, (h * (k - g)).abs())
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: (f64, f64), tol: f64, depth: usize) -> f64 {
    let (value, err) = whole;
    if err <= tol.max(1e-15 * value.abs()) || depth == 0 {
        return value;
    }
    let m = 0.5 * (a + b);
    let left = kronrod(f, a, m);
    let right = kronrod(f, m, b);
    adapt(f, a, m, left, 0.5 * tol, depth - 1) + adapt(f, m, b, right, 0.5 * tol, depth - 1)
}

/// `int_a^b f` to absolute tolerance `tol` (finite limits).
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let whole = kronrod(&f, a, b);
    adapt(&f, a, b, whole, tol, 30)
}

/// Mean and variance of the standard normal restricted to `[a, b]`, by quadrature
/// of `exp(-(t^2 - c^2) / 2)` where `c` is the point of `[a, b]` closest to zero.
pub fn standard_tn_moments(a: f64, b: f64) -> (f64, f64) {
    let c = 0.0_f64.clamp(a, b);
    let lo = if a.is_finite() { a } else { c - 40.0 };
    let hi = if b.is_finite() { b } else { c + 40.0 };
    let w = |t: f64| (-(t * t - c * c) / 2.0).exp();
    let mass = integrate(w, lo, hi, 1e-15);
    let mean = integrate(|t| t * w(t), lo, hi, 1e-15 * (c.abs() + 1.0)) / mass;
    let var = integrate(|t| (t - mean).powi(2) * w(t), lo, hi, 1e-17) / mass;
    (mean, var)
}

/// A random problem with `n <= max_n`, `p <= max_p`, `K` in `{2, 3, 5}` and the
/// generating cutpoints.
pub fn random_problem(seed: u64, max_n: usize, max_p: usize) -> (OrdinalDataset, GaussianPrior, Thresholds) {
    let mut rng = RngStream::new(seed, 99);
    let k = [2, 3, 5][(rng.uniform() * 3.0) as usize % 3];
    let n = 20 + (rng.uniform() * (max_n - 19) as f64) as usize;
    let p = 1 + (rng.uniform() * max_p as f64) as usize % max_p;
    let mut cfg = SimConfig::new(n.min(max_n), p, k);
    cfg.prior_variance = 0.5 + 3.5 * rng.uniform();
    let sim = gen_dataset(&cfg, &mut rng).expect("simulated problem");
    (sim.dataset, cfg.prior().unwrap(), sim.thresholds)
}
