//! Small simulated problems shared by unit tests.

use ndarray::{Array1, Array2};

use crate::model::{GaussianPrior, OrdinalDataset, Thresholds};
use crate::numkern::RngStream;

/// Uniform(-0.5, 0.5) covariates, alternating +-1 coefficients, evenly spaced
/// cutpoints on (-1, 1) and prior `N(0, 2 I)`.
pub fn simulated(n: usize, p: usize, k: usize, seed: u64) -> (OrdinalDataset, GaussianPrior, Thresholds) {
    let mut rng = RngStream::new(seed, 0);
    let x = Array2::from_shape_fn((n, p), |_| rng.uniform() - 0.5);
    let beta = Array1::from_shape_fn(p, |j| if j % 2 == 0 { 1.0 } else { -1.0 });
    let alpha: Vec<f64> = (1..k).map(|j| -1.0 + 2.0 * j as f64 / k as f64).collect();
    let eta = x.dot(&beta);
    let y = eta
        .iter()
        .map(|e| {
            let z = e + rng.standard_normal();
            1 + alpha.iter().filter(|&&a| z > a).count() as i64
        })
        .collect();
    (
        OrdinalDataset::new(x, y, k).unwrap(),
        GaussianPrior::isotropic(p, 0.0, 2.0).unwrap(),
        Thresholds::new(alpha).unwrap(),
    )
}

