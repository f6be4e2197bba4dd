//! Predictive class probabilities for new covariate rows.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ebayes::MethodFit;
use crate::error::{Error, Result};
use crate::model::{GaussianPosterior, Thresholds};
use crate::numkern::{norm_cdf, RngStream};
use crate::pmf::PmfPosterior;

pub const DEFAULT_PMF_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    /// `pr(y = k)`, `k = 1..K`.
    pub probs: Vec<f64>,
    /// `pr(y <= k)`, `k = 1..K-1`.
    pub cumulative: Vec<f64>,
    /// Monte Carlo standard errors of `cumulative`, when estimated by simulation.
    pub std_error: Option<Vec<f64>>,
}

impl PredictiveDistribution {
    /// Builds the distribution from a cumulative vector; each `p_k` is `F_k - F_{k-1}`.
    pub fn from_cumulative(cumulative: Vec<f64>) -> Self {
        let mut probs = Vec::with_capacity(cumulative.len() + 1);
        let mut prev = 0.0;
        for &f in &cumulative {
            probs.push((f - prev).max(0.0));
            prev = f;
        }
        probs.push((1.0 - prev).max(0.0));
        Self { probs, cumulative, std_error: None }
    }

    pub fn categories(&self) -> usize {
        self.probs.len()
    }
}

/// Most probable category (1-based); ties go to the smallest category.
pub fn classify(dist: &PredictiveDistribution) -> usize {
    let mut best = 0;
    for (k, &p) in dist.probs.iter().enumerate() {
        if p > dist.probs[best] {
            best = k;
        }
    }
    best + 1
}

fn check_query(xnew: ArrayView2<'_, f64>, p: usize) -> Result<()> {
    if xnew.ncols() != p {
        return Err(Error::DimensionMismatch(format!("query has {} columns, posterior has {p}", xnew.ncols())));
    }
    if xnew.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("query covariates".into()));
    }
    Ok(())
}

/// Closed form under a Gaussian posterior:
/// `F_k = Phi((alpha_k - x'mu) / sqrt(1 + x'Sigma x))`.
pub fn predict_gaussian(post: &GaussianPosterior, thresholds: &Thresholds, xnew: ArrayView2<'_, f64>) -> Result<Vec<PredictiveDistribution>> {
    check_query(xnew, post.mean.len())?;
    let loc = xnew.dot(&post.mean);
    let sx = xnew.dot(post.covariance.as_array());
    let var = (&sx * &xnew).sum_axis(Axis(1));
    Ok((0..xnew.nrows())
        .map(|r| {
            let scale = (1.0 + var[r].max(0.0)).sqrt();
            let f = thresholds.as_slice().iter().map(|a| norm_cdf((a - loc[r]) / scale)).collect();
            PredictiveDistribution::from_cumulative(f)
        })
        .collect())
}

/// Monte Carlo predictive under PMF. One set of `draws` latent vectors
/// `z ~ prod_i q(z_i)` is shared by every category and query row, so each
/// row's cumulative vector is an average of ordered vectors.
pub fn predict_pmf(post: &PmfPosterior, thresholds: &Thresholds, xnew: ArrayView2<'_, f64>, draws: usize, rng: &mut RngStream) -> Result<Vec<PredictiveDistribution>> {
    check_query(xnew, post.v.dim())?;
    if draws == 0 {
        return Err(Error::Config("draws must be at least 1".into()));
    }
    let base = RngStream::new(rng.next_u64(), rng.stream());
    let centers: Vec<Array1<f64>> = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut r = base.split(d as u64);
            post.conditional_mean(&post.sample_z(&mut r))
        })
        .collect();
    let p = post.v.dim();
    let mut c = Array2::zeros((draws, p));
    for (d, row) in centers.into_iter().enumerate() {
        c.row_mut(d).assign(&row);
    }
    // loc[r, d] = x_r' V(Sigma_0^{-1} mu_0 + X'z_d)
    let loc = xnew.dot(&c.t());
    let vx = xnew.dot(post.v.as_array());
    let var = (&vx * &xnew).sum_axis(Axis(1));
    let alpha = thresholds.as_slice();
    let out = (0..xnew.nrows())
        .into_par_iter()
        .map(|r| {
            let scale = (1.0 + var[r].max(0.0)).sqrt();
            let mut sum = vec![0.0; alpha.len()];
            let mut sum_sq = vec![0.0; alpha.len()];
            for &l in loc.row(r) {
                for (k, a) in alpha.iter().enumerate() {
                    let f = norm_cdf((a - l) / scale);
                    sum[k] += f;
                    sum_sq[k] += f * f;
                }
            }
            let m = draws as f64;
            let f: Vec<f64> = sum.iter().map(|s| s / m).collect();
            let se = sum_sq
                .iter()
                .zip(&f)
                .map(|(sq, mean)| if draws > 1 { ((sq / m - mean * mean).max(0.0) / (m - 1.0)).sqrt() } else { f64::NAN })
                .collect();
            let mut dist = PredictiveDistribution::from_cumulative(f);
            dist.std_error = Some(se);
            dist
        })
        .collect();
    Ok(out)
}

/// Predictive for any fitter output: closed form for MFVB and EP, Monte Carlo for PMF.
pub fn predict_fit(fit: &MethodFit, thresholds: &Thresholds, xnew: ArrayView2<'_, f64>, draws: usize, rng: &mut RngStream) -> Result<Vec<PredictiveDistribution>> {
    match fit {
        MethodFit::Pmf(f) => predict_pmf(&f.posterior, thresholds, xnew, draws, rng),
        other => predict_gaussian(&other.gaussian()?, thresholds, xnew),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussianPrior, OrdinalDataset};
    use crate::numkern::{Interval, SpdMatrix};
    use crate::pmf::{fit_pmf, PmfOptions};
    use crate::testutil::simulated;
    use ndarray::array;
    use proptest::prelude::*;

    fn toy_posterior() -> GaussianPosterior {
        GaussianPosterior { mean: array![0.7, -0.4], covariance: SpdMatrix::new(array![[0.3, 0.1], [0.1, 0.2]]).unwrap() }
    }

    #[test]
    fn zero_row_gives_probit_of_cutpoints() {
        let t = Thresholds::new(vec![-0.5, 0.2, 1.1]).unwrap();
        let out = predict_gaussian(&toy_posterior(), &t, array![[0.0, 0.0]].view()).unwrap();
        for (k, a) in t.as_slice().iter().enumerate() {
            assert_eq!(out[0].cumulative[k], norm_cdf(*a));
        }
        assert_eq!(out[0].probs[0], norm_cdf(-0.5));
        assert!((out[0].probs[1] - (norm_cdf(0.2) - norm_cdf(-0.5))).abs() < 1e-16);
    }

    #[test]
    fn closed_form_matches_monte_carlo() {
        let post = toy_posterior();
        let t = Thresholds::new(vec![-0.3, 0.9]).unwrap();
        let x = array![1.2, -0.8];
        let exact = &predict_gaussian(&post, &t, x.view().insert_axis(Axis(0))).unwrap()[0];
        let chol = post.covariance.cholesky().unwrap();
        let mut rng = RngStream::new(17, 0);
        let m = 400_000;
        let (mut s, mut s2) = ([0.0; 2], [0.0; 2]);
        for _ in 0..m {
            let eps = array![rng.standard_normal(), rng.standard_normal()];
            let beta = &post.mean + &chol.mul_lower(eps.view());
            let eta = x.dot(&beta);
            for k in 0..2 {
                let f = norm_cdf(t.as_slice()[k] - eta);
                s[k] += f;
                s2[k] += f * f;
            }
        }
        for k in 0..2 {
            let mean = s[k] / m as f64;
            let se = ((s2[k] / m as f64 - mean * mean) / m as f64).sqrt();
            assert!((mean - exact.cumulative[k]).abs() < 4.0 * se, "k={k}: {mean} vs {}", exact.cumulative[k]);
        }
    }

    #[test]
    fn classify_breaks_ties_low() {
        let d = |p: Vec<f64>| PredictiveDistribution { probs: p, cumulative: vec![], std_error: None };
        assert_eq!(classify(&d(vec![0.1, 0.7, 0.2])), 2);
        assert_eq!(classify(&d(vec![0.5, 0.5])), 1);
        assert_eq!(classify(&d(vec![0.25; 4])), 1);
    }

    #[test]
    fn dimension_mismatch() {
        let t = Thresholds::new(vec![0.0]).unwrap();
        assert!(matches!(predict_gaussian(&toy_posterior(), &t, array![[1.0, 2.0, 3.0]].view()), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn decreasing_along_mean_direction() {
        let post = toy_posterior();
        let t = Thresholds::new(vec![-0.3, 0.9]).unwrap();
        let xs = Array2::from_shape_fn((50, 2), |(r, j)| (r as f64 / 10.0 - 2.5) * post.mean[j]);
        let out = predict_gaussian(&post, &t, xs.view()).unwrap();
        for w in out.windows(2) {
            for k in 0..2 {
                assert!(w[1].cumulative[k] <= w[0].cumulative[k]);
            }
        }
    }

    #[test]
    fn pmf_without_data_matches_prior_predictive() {
        let d = OrdinalDataset::new(Array2::zeros((0, 2)), vec![], 3).unwrap();
        let prior = GaussianPrior::new(array![0.3, -0.6], SpdMatrix::new(array![[1.5, 0.2], [0.2, 0.8]]).unwrap()).unwrap();
        let t = Thresholds::new(vec![-0.4, 0.6]).unwrap();
        let fit = fit_pmf(&d, &prior, &t, &PmfOptions::default()).unwrap();
        let xs = array![[0.5, 1.0], [-1.0, 0.2]];
        let mc = predict_pmf(&fit.posterior, &t, xs.view(), 5000, &mut RngStream::new(1, 1)).unwrap();
        let exact = predict_gaussian(&GaussianPosterior { mean: prior.mean().clone(), covariance: prior.covariance().clone() }, &t, xs.view()).unwrap();
        for (a, b) in mc.iter().zip(&exact) {
            // With no data every draw is identical, so the estimate is exact.
            for k in 0..2 {
                assert!((a.cumulative[k] - b.cumulative[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vacuous_sites_match_gaussian_predictive() {
        let (d, prior, t) = simulated(60, 2, 3, 5);
        let mut fit = fit_pmf(&d, &prior, &t, &PmfOptions::default()).unwrap();
        fit.posterior.intervals = vec![Interval::real_line(); d.n()];
        let gauss = fit.posterior.moments().unwrap();
        let xs = array![[0.4, -0.3], [1.0, 1.0], [-0.7, 0.2]];
        let mc = predict_pmf(&fit.posterior, &t, xs.view(), 20_000, &mut RngStream::new(8, 3)).unwrap();
        let exact = predict_gaussian(&gauss, &t, xs.view()).unwrap();
        for (a, b) in mc.iter().zip(&exact) {
            let se = a.std_error.as_ref().unwrap();
            for k in 0..2 {
                assert!((a.cumulative[k] - b.cumulative[k]).abs() < 4.0 * se[k] + 1e-12, "{} vs {}", a.cumulative[k], b.cumulative[k]);
            }
        }
    }

    #[test]
    fn monte_carlo_variance_shrinks_with_draws() {
        let (d, prior, t) = simulated(80, 2, 3, 9);
        let fit = fit_pmf(&d, &prior, &t, &PmfOptions::default()).unwrap();
        let xs = array![[1.0, -1.0]];
        let spread = |draws: usize| {
            let vals: Vec<f64> = (0..40)
                .map(|s| predict_pmf(&fit.posterior, &t, xs.view(), draws, &mut RngStream::new(100 + s, 0)).unwrap()[0].cumulative[0])
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
        };
        let (v1, v2) = (spread(100), spread(1000));
        let slope = (v2 / v1).log10();
        assert!((-1.5..-0.5).contains(&slope), "slope {slope}");
    }

    #[test]
    fn pmf_prediction_is_reproducible() {
        let (d, prior, t) = simulated(50, 2, 4, 2);
        let fit = fit_pmf(&d, &prior, &t, &PmfOptions::default()).unwrap();
        let a = predict_pmf(&fit.posterior, &t, d.x(), 300, &mut RngStream::new(4, 0)).unwrap();
        let b = predict_pmf(&fit.posterior, &t, d.x(), 300, &mut RngStream::new(4, 0)).unwrap();
        assert_eq!(a, b);
        for dist in &a {
            assert!(dist.cumulative.windows(2).all(|w| w[0] <= w[1]));
            assert!((dist.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn probabilities_form_a_distribution(m0 in -3.0..3.0f64, m1 in -3.0..3.0f64, x0 in -5.0..5.0f64, x1 in -5.0..5.0f64, a in -2.0..0.0f64, gap in 0.01..3.0f64) {
            let post = GaussianPosterior { mean: array![m0, m1], covariance: SpdMatrix::new(array![[0.5, 0.1], [0.1, 0.4]]).unwrap() };
            let t = Thresholds::new(vec![a, a + gap, a + 2.0 * gap]).unwrap();
            let out = predict_gaussian(&post, &t, array![[x0, x1]].view()).unwrap();
            let dist = &out[0];
            prop_assert!(dist.probs.iter().all(|&p| p >= 0.0));
            prop_assert!((dist.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(dist.cumulative.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
