//! Expectation propagation with rank-one Gaussian sites
//! `q_i(beta) ∝ exp(-k_i (x_i'beta)^2 / 2 + w_i x_i'beta)`.
//!
//! The global covariance `S = Q^{-1}` is maintained directly. Removing a
//! site and adding back its refreshed version are both rank-one changes
//! along `S x_i`, so a site visit costs `O(p^2)`.

use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfvb::check_tolerance;
use crate::model::{validate, FitReport, GaussianPosterior, GaussianPrior, OrdinalDataset, Thresholds};
use crate::numkern::{add_scaled_outer, interval_stats, symmetrize, Interval, SpdMatrix};

const GUARD: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpOptions {
    pub epsilon: f64,
    pub max_sweeps: usize,
    /// `k <- d k_new + (1 - d) k_old`, likewise for `w`; must lie in (0, 1].
    pub damping: f64,
    /// Visit sites in descending order.
    pub reverse_order: bool,
}

impl Default for EpOptions {
    fn default() -> Self {
        Self { epsilon: 1e-6, max_sweeps: 1000, damping: 1.0, reverse_order: false }
    }
}

/// Site parameters: precision `k_i`, shift `w_i` and log-normalizer `log Z_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpSites {
    pub k: Array1<f64>,
    pub w: Array1<f64>,
    pub log_z: Array1<f64>,
}

impl EpSites {
    pub fn zeros(n: usize) -> Self {
        Self { k: Array1::zeros(n), w: Array1::zeros(n), log_z: Array1::zeros(n) }
    }
}

/// Global approximation in mixed form: covariance `S` and natural shift `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpGlobal {
    pub s: SpdMatrix,
    pub r: Array1<f64>,
}

impl EpGlobal {
    pub fn mean(&self) -> Array1<f64> {
        self.s.as_array().dot(&self.r)
    }
}

/// Normalizer and moments of `h(beta) ∝ [Phi(b - x'beta) - Phi(a - x'beta)] N(beta; S r, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridMoments {
    pub log_z: f64,
    pub mean: Array1<f64>,
    pub covariance: SpdMatrix,
}

#[derive(Debug, Clone)]
pub struct EpFit {
    pub posterior: GaussianPosterior,
    pub sites: EpSites,
    pub global: EpGlobal,
    pub report: FitReport,
    /// `max_j |change in E[beta_j]|` over each sweep.
    pub mean_change: Vec<f64>,
}

/// Moments of the hybrid formed by a cavity `N(S r, S)` and one likelihood term.
pub fn hybrid_moments(cavity_s: &SpdMatrix, cavity_r: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>, interval: Interval) -> Result<HybridMoments> {
    let p = cavity_s.dim();
    if cavity_r.len() != p || x.len() != p {
        return Err(Error::DimensionMismatch(format!("cavity dimension {p}, shift {}, covariate {}", cavity_r.len(), x.len())));
    }
    let s = cavity_s.as_array();
    let m = s.dot(&cavity_r);
    let sx = s.dot(&x);
    let c = x.dot(&sx);
    let root = (1.0 + c).sqrt();
    let eta = x.dot(&m);
    let stats = interval_stats((interval.lower() - eta) / root, (interval.upper() - eta) / root)?;
    let mean = &m - &(&sx * (stats.zeta1 / root));
    let mut cov = s.to_owned();
    add_scaled_outer(&mut cov, -(1.0 - stats.variance_ratio()) / (1.0 + c), sx.view());
    symmetrize(&mut cov);
    Ok(HybridMoments { log_z: stats.log_mass, mean, covariance: SpdMatrix::from_trusted(cov) })
}

/// `log Psi(r, Q) = (p/2) log 2 pi - log|Q|/2 + r'Q^{-1}r/2`, evaluated from `S = Q^{-1}`.
fn log_psi(s: &SpdMatrix, r: &Array1<f64>) -> Result<f64> {
    let chol = s.cholesky()?;
    let p = s.dim() as f64;
    Ok(0.5 * p * LN_2PI + 0.5 * chol.log_det() + 0.5 * r.dot(&s.as_array().dot(r)))
}

/// `log Psi(r_EP, Q_EP) - log Psi(r_0, Q_0) - sum_i log Z_i`.
pub fn ep_log_marginal(global: &EpGlobal, sites: &EpSites, prior: &GaussianPrior) -> Result<f64> {
    let r0 = prior.covariance().cholesky()?.solve_vec(prior.mean().view());
    Ok(log_psi(&global.s, &global.r)? - log_psi(prior.covariance(), &r0)? - sites.log_z.sum())
}

/// Outcome of one site visit.
enum Visit {
    Updated,
    Skipped,
}

/// Refreshes site `i` in place.
fn visit_site(global: &mut EpGlobal, sites: &mut EpSites, i: usize, x: ArrayView1<'_, f64>, interval: Interval, damping: f64) -> Result<Visit> {
    let (k_old, w_old) = (sites.k[i], sites.w[i]);
    let sx = global.s.as_array().dot(&x);
    let q = x.dot(&sx);
    // Cavity: S_cav = S + [k/(1 - k q)] S x x'S.
    let denom = 1.0 - k_old * q;
    if !(denom > GUARD) {
        return Ok(Visit::Skipped);
    }
    let down = k_old / denom;
    // S_cav x = S x (1 + down q); x'S_cav x = q (1 + down q).
    let scale = 1.0 + down * q;
    let c = q * scale;
    let r_cav = &global.r - &(&x * w_old);
    let s_r_cav = global.s.as_array().dot(&r_cav);
    let eta = x.dot(&s_r_cav) + down * q * sx.dot(&r_cav);
    let root = (1.0 + c).sqrt();
    let stats = match interval_stats((interval.lower() - eta) / root, (interval.upper() - eta) / root) {
        Ok(st) if st.log_mass.is_finite() => st,
        _ => return Ok(Visit::Skipped),
    };
    let tau = stats.variance_ratio();
    let k_new = (1.0 - tau) / (1.0 + c * tau);
    let w_new = k_new * eta - stats.zeta1 * root / (1.0 + c * tau);
    let k = damping * k_new + (1.0 - damping) * k_old;
    let w = damping * w_new + (1.0 - damping) * w_old;
    let up = 1.0 + k * c;
    if !(up > GUARD) || !k.is_finite() || !w.is_finite() {
        return Ok(Visit::Skipped);
    }
    // S_new = S_cav - [k/(1 + k c)] S_cav x x'S_cav, folded into one update along S x.
    let gamma = k / up;
    let coef = down - gamma * scale * scale;
    add_scaled_outer(global.s_mut(), coef, sx.view());
    global.r = &r_cav + &(&x * w);
    sites.k[i] = k;
    sites.w[i] = w;
    sites.log_z[i] = 0.5 * (2.0 * w * eta + w * w * c - k * eta * eta) / up - 0.5 * up.ln() - stats.log_mass;
    Ok(Visit::Updated)
}

impl EpGlobal {
    fn s_mut(&mut self) -> &mut ndarray::Array2<f64> {
        self.s.array_mut()
    }
}

pub fn fit_ep(dataset: &OrdinalDataset, prior: &GaussianPrior, thresholds: &Thresholds, options: &EpOptions) -> Result<EpFit> {
    fit_ep_from(dataset, prior, thresholds, options, None)
}

/// As [`fit_ep`], starting from the sites and global approximation of `init`
/// (a fit of the same data and prior) instead of the prior.
pub fn fit_ep_from(
    dataset: &OrdinalDataset,
    prior: &GaussianPrior,
    thresholds: &Thresholds,
    options: &EpOptions,
    init: Option<(&EpGlobal, &EpSites)>,
) -> Result<EpFit> {
    validate(dataset, prior, thresholds)?;
    check_tolerance(options.epsilon, options.max_sweeps)?;
    if !(options.damping > 0.0 && options.damping <= 1.0) {
        return Err(Error::Config(format!("damping must lie in (0, 1], got {}", options.damping)));
    }
    let start = Instant::now();
    let n = dataset.n();
    let r0 = prior.covariance().cholesky()?.solve_vec(prior.mean().view());
    let (mut global, mut sites) = match init {
        Some((g, st)) => {
            if st.k.len() != n || g.r.len() != dataset.p() {
                return Err(Error::DimensionMismatch("EP starting state does not match the dataset".into()));
            }
            (g.clone(), st.clone())
        }
        None => (EpGlobal { s: prior.covariance().clone(), r: r0 }, EpSites::zeros(n)),
    };
    let intervals = dataset.intervals(thresholds);
    let order: Vec<usize> = if options.reverse_order { (0..n).rev().collect() } else { (0..n).collect() };

    let mut trace = Vec::new();
    let mut mean_change = Vec::new();
    let mut skipped = 0;
    let mut converged = n == 0;
    let mut previous = ep_log_marginal(&global, &sites, prior)?;
    let mut mean = global.mean();
    while !converged && trace.len() < options.max_sweeps {
        for &i in &order {
            if let Visit::Skipped = visit_site(&mut global, &mut sites, i, dataset.row(i), intervals[i], options.damping)? {
                skipped += 1;
            }
        }
        symmetrize(global.s_mut());
        let objective = ep_log_marginal(&global, &sites, prior)?;
        let new_mean = global.mean();
        mean_change.push(new_mean.iter().zip(mean.iter()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())));
        mean = new_mean;
        trace.push(objective);
        converged = (objective - previous).abs() < options.epsilon;
        previous = objective;
    }

    let mut notes = Vec::new();
    if skipped > 0 {
        notes.push(format!("{skipped} site updates skipped by the positive-definiteness guard"));
    }
    let report = FitReport {
        iterations: trace.len(),
        converged,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        final_objective: previous,
        trace,
        skipped_updates: skipped,
        notes,
    };
    let posterior = if n == 0 {
        GaussianPosterior { mean: prior.mean().clone(), covariance: prior.covariance().clone() }
    } else {
        GaussianPosterior { mean, covariance: global.s.clone() }
    };
    Ok(EpFit { posterior, sites, global, report, mean_change })
}

/// The cavity `(S_{-i}, r_{-i})` obtained by removing site `i` from `global`.
pub fn cavity(global: &EpGlobal, sites: &EpSites, i: usize, x: ArrayView1<'_, f64>) -> Result<EpGlobal> {
    let sx = global.s.as_array().dot(&x);
    let denom = 1.0 - sites.k[i] * x.dot(&sx);
    if !(denom > GUARD) {
        return Err(Error::SingularUpdate { denominator: denom });
    }
    let mut s = global.s.as_array().clone();
    add_scaled_outer(&mut s, sites.k[i] / denom, sx.view());
    symmetrize(&mut s);
    Ok(EpGlobal { s: SpdMatrix::from_trusted(s), r: &global.r - &(&x * sites.w[i]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkern::{norm_cdf, relative_frobenius, Cholesky};
    use crate::testutil::simulated;
    use ndarray::{array, Array2};

    #[test]
    fn zero_covariate_leaves_cavity_unchanged() {
        let s = SpdMatrix::new(array![[2.0, 0.5], [0.5, 1.0]]).unwrap();
        let r = array![0.3, -0.1];
        let iv = Interval::new(-0.4, 1.1).unwrap();
        let h = hybrid_moments(&s, r.view(), array![0.0, 0.0].view(), iv).unwrap();
        assert!((h.log_z - (norm_cdf(1.1) - norm_cdf(-0.4)).ln()).abs() < 1e-15);
        assert_eq!(h.mean, s.as_array().dot(&r));
        assert_eq!(&h.covariance, &s);
        let h = hybrid_moments(&s, r.view(), array![1.0, 2.0].view(), Interval::real_line()).unwrap();
        assert_eq!(h.log_z, 0.0);
        assert_eq!(h.mean, s.as_array().dot(&r));
        assert!(relative_frobenius(h.covariance.view(), s.view()) < 1e-15);
    }

    /// Trapezoid rule on a wide grid for the 1D hybrid.
    fn quadrature_1d(s: f64, r: f64, x: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
        let m = s * r;
        let sd = s.sqrt();
        let steps = 200_000;
        let (a, b) = (m - 12.0 * sd, m + 12.0 * sd);
        let h = (b - a) / steps as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for j in 0..=steps {
            let beta = a + h * j as f64;
            let w = if j == 0 || j == steps { 0.5 } else { 1.0 };
            let like = norm_cdf(hi - x * beta) - norm_cdf(lo - x * beta);
            let dens = (-0.5 * (beta - m) * (beta - m) / s).exp() / (2.0 * std::f64::consts::PI * s).sqrt();
            let f = w * h * like * dens;
            z += f;
            m1 += f * beta;
            m2 += f * beta * beta;
        }
        let mean = m1 / z;
        (z.ln(), mean, m2 / z - mean * mean)
    }

    #[test]
    fn one_dimensional_hybrid_matches_quadrature() {
        for &(s, r, x, lo, hi) in &[(1.0, 0.0, 1.0, 0.0, f64::INFINITY), (2.5, 0.7, -0.8, -1.0, 0.3), (0.3, 4.0, 2.0, f64::NEG_INFINITY, -0.5)] {
            let h = hybrid_moments(&SpdMatrix::new(array![[s]]).unwrap(), array![r].view(), array![x].view(), Interval::new(lo, hi).unwrap()).unwrap();
            let (lz, mean, var) = quadrature_1d(s, r, x, lo, hi);
            assert!((h.log_z - lz).abs() < 1e-8, "{} vs {lz}", h.log_z);
            assert!((h.mean[0] - mean).abs() < 1e-8, "{} vs {mean}", h.mean[0]);
            assert!((h.covariance.as_array()[[0, 0]] - var).abs() < 1e-8);
        }
    }

    #[test]
    fn empty_data_returns_prior_with_zero_sweeps() {
        let d = OrdinalDataset::new(Array2::zeros((0, 2)), vec![], 2).unwrap();
        let prior = GaussianPrior::new(array![1.0, 2.0], SpdMatrix::new(array![[1.0, 0.2], [0.2, 3.0]]).unwrap()).unwrap();
        let t = Thresholds::new(vec![0.0]).unwrap();
        let fit = fit_ep(&d, &prior, &t, &EpOptions::default()).unwrap();
        assert_eq!(fit.report.iterations, 0);
        assert!(fit.report.trace.is_empty());
        assert_eq!(&fit.posterior.mean, prior.mean());
        assert_eq!(&fit.posterior.covariance, prior.covariance());
        assert_eq!(ep_log_marginal(&fit.global, &fit.sites, &prior).unwrap(), 0.0);
    }

    #[test]
    fn single_site_marginal_is_log_half() {
        let d = OrdinalDataset::new(array![[1.0]], vec![2], 2).unwrap();
        let prior = GaussianPrior::isotropic(1, 0.0, 1.0).unwrap();
        let t = Thresholds::new(vec![0.0]).unwrap();
        let fit = fit_ep(&d, &prior, &t, &EpOptions::default()).unwrap();
        assert!(fit.report.converged);
        assert!((fit.report.final_objective - 0.5_f64.ln()).abs() < 1e-6, "{}", fit.report.final_objective);
    }

    /// Binary probit EP with explicit matrix inverses at every step.
    fn binary_reference(x: &Array2<f64>, y: &[usize], cut: f64, prior_var: f64, sweeps: usize) -> Array1<f64> {
        let (n, p) = x.dim();
        let q0 = Array2::<f64>::eye(p) / prior_var;
        let mut k = vec![0.0; n];
        let mut w = vec![0.0; n];
        let inv = |m: &Array2<f64>| Cholesky::factor(m.view()).unwrap().inverse();
        for _ in 0..sweeps {
            for i in 0..n {
                let xi = x.row(i);
                let mut q_cav = q0.clone();
                let mut r_cav = Array1::<f64>::zeros(p);
                for j in (0..n).filter(|&j| j != i) {
                    let xj = x.row(j).to_owned();
                    q_cav = q_cav + k[j] * xj.view().insert_axis(ndarray::Axis(1)).dot(&xj.view().insert_axis(ndarray::Axis(0)));
                    r_cav = r_cav + w[j] * &xj;
                }
                let s_cav = inv(&q_cav);
                let m = s_cav.dot(&r_cav);
                let c = xi.dot(&s_cav.dot(&xi));
                let e = xi.dot(&m);
                let root = (1.0 + c).sqrt();
                // y = 2 means z > cut, y = 1 means z < cut.
                let (a, b) = if y[i] == 2 { ((cut - e) / root, f64::INFINITY) } else { (f64::NEG_INFINITY, (cut - e) / root) };
                let mass = norm_cdf(b) - norm_cdf(a);
                let pdf = |t: f64| if t.is_infinite() { 0.0 } else { (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt() };
                let tpdf = |t: f64| if t.is_infinite() { 0.0 } else { t * pdf(t) };
                let z1 = (pdf(b) - pdf(a)) / mass;
                let z2 = (tpdf(b) - tpdf(a)) / mass;
                // Match moments of the hybrid directly in natural parameters.
                let mean_h = &m - &(s_cav.dot(&xi) * (z1 / root));
                let sx = s_cav.dot(&xi);
                let cov_h = &s_cav - &((z1 * z1 + z2) / (1.0 + c) * sx.view().insert_axis(ndarray::Axis(1)).dot(&sx.view().insert_axis(ndarray::Axis(0))));
                let q_h = inv(&cov_h);
                let site_q = &q_h - &q_cav;
                let site_r = q_h.dot(&mean_h) - &r_cav;
                // Site precision is k x x'; read k off along x.
                let xx = xi.dot(&xi);
                k[i] = xi.dot(&site_q.dot(&xi)) / (xx * xx);
                w[i] = site_r.dot(&xi) / xx;
            }
        }
        let mut q = q0;
        let mut r = Array1::<f64>::zeros(p);
        for j in 0..n {
            let xj = x.row(j).to_owned();
            q = q + k[j] * xj.view().insert_axis(ndarray::Axis(1)).dot(&xj.view().insert_axis(ndarray::Axis(0)));
            r = r + w[j] * &xj;
        }
        inv(&q).dot(&r)
    }

    #[test]
    fn binary_case_matches_dense_reference() {
        let (d, prior, _) = simulated(40, 2, 2, 13);
        let t = Thresholds::new(vec![0.1]).unwrap();
        let fit = fit_ep(&d, &prior, &t, &EpOptions { epsilon: 1e-300, max_sweeps: 6, ..EpOptions::default() }).unwrap();
        let reference = binary_reference(&d.x().to_owned(), d.y(), 0.1, 2.0, 6);
        for (a, b) in fit.posterior.mean.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn rank_one_path_matches_dense_inverse() {
        let (d, prior, t) = simulated(150, 6, 4, 5);
        for sweeps in 1..=3 {
            let fit = fit_ep(&d, &prior, &t, &EpOptions { epsilon: 1e-300, max_sweeps: sweeps, ..EpOptions::default() }).unwrap();
            let mut q = Array2::<f64>::eye(6) * 0.5;
            for i in 0..d.n() {
                let x = d.row(i);
                add_scaled_outer(&mut q, fit.sites.k[i], x);
            }
            let dense = Cholesky::factor(q.view()).unwrap().inverse();
            assert!(relative_frobenius(fit.global.s.view(), dense.view()) < 1e-8);
        }
    }

    #[test]
    fn converged_sites_match_their_hybrids() {
        let (d, prior, t) = simulated(200, 3, 3, 17);
        let opts = EpOptions::default();
        let fit = fit_ep(&d, &prior, &t, &opts).unwrap();
        assert!(fit.report.converged);
        assert_eq!(fit.report.skipped_updates, 0);
        let intervals = d.intervals(&t);
        for i in 0..d.n() {
            let cav = cavity(&fit.global, &fit.sites, i, d.row(i)).unwrap();
            let h = hybrid_moments(&cav.s, cav.r.view(), d.row(i), intervals[i]).unwrap();
            assert!(h.log_z <= 0.0);
            let dm = (&h.mean - &fit.posterior.mean).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let dc = (h.covariance.as_array() - fit.posterior.covariance.as_array()).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(dm < 50.0 * opts.epsilon && dc < 50.0 * opts.epsilon, "site {i}: {dm} {dc}");
        }
    }

    #[test]
    fn order_does_not_change_the_fixed_point() {
        let (d, prior, t) = simulated(150, 3, 5, 23);
        let a = fit_ep(&d, &prior, &t, &EpOptions::default()).unwrap();
        let b = fit_ep(&d, &prior, &t, &EpOptions { reverse_order: true, ..EpOptions::default() }).unwrap();
        let diff = (&a.posterior.mean - &b.posterior.mean).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn damping_reaches_the_same_fixed_point() {
        let (d, prior, t) = simulated(100, 2, 3, 2);
        let a = fit_ep(&d, &prior, &t, &EpOptions { epsilon: 1e-10, ..EpOptions::default() }).unwrap();
        let b = fit_ep(&d, &prior, &t, &EpOptions { epsilon: 1e-10, damping: 0.5, ..EpOptions::default() }).unwrap();
        let diff = (&a.posterior.mean - &b.posterior.mean).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-5, "{diff}");
        assert!(fit_ep(&d, &prior, &t, &EpOptions { damping: 0.0, ..EpOptions::default() }).is_err());
    }
}
