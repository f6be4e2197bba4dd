//! Partially factorized mean-field: `q(beta, z) = p(beta | z) prod_i q(z_i)`
//! with truncated-normal sites `q(z_i) = TN([alpha_{y_i-1}, alpha_{y_i}], xi_i, sigma_i^2)`.
//!
//! The site locations are updated in ascending order. Each update needs
//! `x_i' V X_{-i}' (zbar_{-i} - X_{-i} mu_0)`, which is carried through the
//! running vector `g = X'(zbar - X mu_0)` so a sweep costs `O(np)` and no
//! `n x n` matrix is ever formed.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfvb::{check_tolerance, initial_zbar, precompute_v, shared_elbo_constant};
use crate::model::{validate, FitReport, GaussianPosterior, GaussianPrior, OrdinalDataset, Thresholds};
use crate::numkern::{interval_stats, standard_tn_sample, symmetrize, tn_mean_stats, Interval, IntervalStats, RngStream, SpdMatrix};

const LEVERAGE_LIMIT: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmfOptions {
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Also return the marginal mean and covariance of `q(beta)`.
    pub compute_moments: bool,
}

impl Default for PmfOptions {
    fn default() -> Self {
        Self { epsilon: 1e-6, max_iterations: 1000, compute_moments: true }
    }
}

/// Site parameters during and after the sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfState {
    pub zbar: Array1<f64>,
    pub xi: Array1<f64>,
    pub sigma: Array1<f64>,
    pub v: SpdMatrix,
}

/// The fitted partially factorized approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfPosterior {
    pub xi: Array1<f64>,
    /// `sigma_i = (1 - x_i' V x_i)^{-1/2}`.
    pub sigma: Array1<f64>,
    pub v: SpdMatrix,
    pub intervals: Vec<Interval>,
    pub prior: GaussianPrior,
    pub x: Array2<f64>,
    /// `Sigma_0^{-1} mu_0`.
    pub prior_shift: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct PmfFit {
    pub posterior: PmfPosterior,
    pub moments: Option<GaussianPosterior>,
    pub state: PmfState,
    pub report: FitReport,
}

/// Leverages `h_i = x_i' V x_i` and the rows `V x_i`.
pub(crate) fn leverages(dataset: &OrdinalDataset, v: &SpdMatrix) -> Result<(Array2<f64>, Array1<f64>)> {
    let b = dataset.x().dot(v.as_array());
    let h: Array1<f64> = (&b * &dataset.x()).sum_axis(Axis(1));
    if let Some((row, &leverage)) = h.iter().enumerate().find(|(_, &l)| !(l < LEVERAGE_LIMIT)) {
        return Err(Error::DegenerateLeverage { row, leverage });
    }
    Ok((b, h))
}

/// One ascending Gauss-Seidel sweep over the sites. Returns the interval
/// statistics at the new locations.
pub(crate) fn pmf_sweep(
    dataset: &OrdinalDataset,
    intervals: &[Interval],
    vx: &Array2<f64>,
    leverage: &Array1<f64>,
    sigma: &Array1<f64>,
    offset: &Array1<f64>,
    zbar: &mut Array1<f64>,
    xi: &mut Array1<f64>,
) -> Result<Vec<IntervalStats>> {
    let x = dataset.x();
    let mut g = x.t().dot(&(&*zbar - offset));
    let mut stats = Vec::with_capacity(dataset.n());
    for i in 0..dataset.n() {
        let resid = zbar[i] - offset[i];
        let s2 = sigma[i] * sigma[i];
        xi[i] = offset[i] + s2 * (vx.row(i).dot(&g) - leverage[i] * resid);
        let (m, st) = tn_mean_stats(intervals[i], xi[i], sigma[i])?;
        let delta = m - zbar[i];
        zbar[i] = m;
        g.scaled_add(delta, &x.row(i));
        stats.push(st);
    }
    Ok(stats)
}

struct Quadratics {
    log_mass: f64,
    site: f64,
    zz: f64,
    zm: f64,
}

fn quadratics(state: &PmfState, dataset: &OrdinalDataset, prior: &GaussianPrior, log_mass: f64) -> Quadratics {
    let x = dataset.x();
    let v = state.v.as_array();
    let m = x.dot(prior.mean());
    let t = x.t().dot(&state.zbar);
    let xtm = x.t().dot(&m);
    let vt = v.dot(&t);
    let site = state
        .zbar
        .iter()
        .zip(state.xi.iter())
        .zip(state.sigma.iter())
        .map(|((z, xi), s)| 0.5 * z * z / (s * s) - z * xi / (s * s) + 0.5 * xi * xi / (s * s))
        .sum();
    Quadratics {
        log_mass,
        site,
        zz: state.zbar.dot(&state.zbar) - t.dot(&vt),
        zm: state.zbar.dot(&m) - vt.dot(&xtm),
    }
}

impl Quadratics {
    fn elbo(&self) -> f64 {
        self.log_mass + self.site - 0.5 * self.zz + self.zm
    }
}

fn total_log_mass(state: &PmfState, intervals: &[Interval]) -> Result<f64> {
    let mut total = 0.0;
    for (i, iv) in intervals.iter().enumerate() {
        let (a, b) = iv.standardize(state.xi[i], state.sigma[i]);
        total += interval_stats(a, b)?.log_mass;
    }
    Ok(total)
}

/// ELBO with its additive constant dropped:
/// `sum_i log[Phi(v_i) - Phi(u_i)] + sum_i (zbar_i - xi_i)^2 / (2 sigma_i^2)
///  - zbar'(I - XVX')zbar / 2 + zbar'(I - XVX')X mu_0`.
/// Quadratic forms in `I - XVX'` are evaluated as `a'b - (X'a)'V(X'b)`.
pub fn elbo_pmf(state: &PmfState, dataset: &OrdinalDataset, prior: &GaussianPrior, thresholds: &Thresholds) -> Result<f64> {
    check_state(state, dataset)?;
    let log_mass = total_log_mass(state, &dataset.intervals(thresholds))?;
    Ok(quadratics(state, dataset, prior, log_mass).elbo())
}

/// The ELBO including every constant, so that it lower-bounds `log p(y)` and
/// can be compared with [`crate::mfvb::elbo_mfvb_full`].
pub fn elbo_pmf_full(state: &PmfState, dataset: &OrdinalDataset, prior: &GaussianPrior, thresholds: &Thresholds) -> Result<f64> {
    let base = elbo_pmf(state, dataset, prior, thresholds)?;
    let x = dataset.x();
    let m = x.dot(prior.mean());
    let xtm = x.t().dot(&m);
    let m_lambda_m = m.dot(&m) - xtm.dot(&state.v.as_array().dot(&xtm));
    let log_sigma: f64 = state.sigma.iter().map(|s| s.ln()).sum();
    Ok(base + log_sigma - 0.5 * m_lambda_m + shared_elbo_constant(&state.v, prior)?)
}

fn check_state(state: &PmfState, dataset: &OrdinalDataset) -> Result<()> {
    let n = dataset.n();
    if state.zbar.len() != n || state.xi.len() != n || state.sigma.len() != n || state.v.dim() != dataset.p() {
        return Err(Error::DimensionMismatch("PMF state does not match the dataset".into()));
    }
    Ok(())
}

pub fn fit_pmf(dataset: &OrdinalDataset, prior: &GaussianPrior, thresholds: &Thresholds, options: &PmfOptions) -> Result<PmfFit> {
    fit_pmf_from(dataset, prior, thresholds, options, None)
}

/// As [`fit_pmf`], starting from the site means of `init` instead of the prior.
/// `init.v` is reused as is.
pub fn fit_pmf_from(
    dataset: &OrdinalDataset,
    prior: &GaussianPrior,
    thresholds: &Thresholds,
    options: &PmfOptions,
    init: Option<&PmfState>,
) -> Result<PmfFit> {
    validate(dataset, prior, thresholds)?;
    check_tolerance(options.epsilon, options.max_iterations)?;
    if let Some(s) = init {
        check_state(s, dataset)?;
    }
    let start = Instant::now();
    let prior_shift = prior.covariance().cholesky()?.solve_vec(prior.mean().view());
    let v = match init {
        Some(s) => s.v.clone(),
        None => precompute_v(dataset.x(), prior)?,
    };
    let (vx, leverage) = leverages(dataset, &v)?;
    let sigma = leverage.mapv(|h| (1.0 - h).sqrt().recip());
    let intervals = dataset.intervals(thresholds);
    let offset = dataset.x().dot(prior.mean());

    let (mut zbar, mut xi) = match init {
        Some(s) => (s.zbar.clone(), s.xi.clone()),
        None => (initial_zbar(dataset, prior, &intervals)?, offset.clone()),
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last_stats = Vec::new();
    if dataset.n() == 0 {
        trace.push(0.0);
        converged = true;
    }
    while !converged && trace.len() < options.max_iterations {
        last_stats = pmf_sweep(dataset, &intervals, &vx, &leverage, &sigma, &offset, &mut zbar, &mut xi)?;
        let log_mass: f64 = last_stats.iter().map(|s| s.log_mass).sum();
        let state = PmfState { zbar: zbar.clone(), xi: xi.clone(), sigma: sigma.clone(), v: v.clone() };
        let elbo = quadratics(&state, dataset, prior, log_mass).elbo();
        if let Some(&prev) = trace.last() {
            if elbo - prev < options.epsilon {
                converged = true;
            }
        }
        trace.push(elbo);
    }

    let moments = if options.compute_moments {
        Some(if dataset.n() == 0 {
            GaussianPosterior { mean: prior.mean().clone(), covariance: prior.covariance().clone() }
        } else {
            let omega: Array1<f64> = last_stats
                .iter()
                .zip(sigma.iter())
                .map(|(st, s)| s * s * st.variance_ratio())
                .collect();
            gaussian_moments(&v, &vx, &prior_shift, dataset, &zbar, &omega)
        })
    } else {
        None
    };

    let report = FitReport {
        iterations: trace.len(),
        converged,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        final_objective: *trace.last().expect("at least one entry"),
        trace,
        ..FitReport::default()
    };
    let posterior = PmfPosterior {
        xi: xi.clone(),
        sigma: sigma.clone(),
        v: v.clone(),
        intervals,
        prior: prior.clone(),
        x: dataset.x().to_owned(),
        prior_shift,
    };
    Ok(PmfFit { posterior, moments, state: PmfState { zbar, xi, sigma, v }, report })
}

/// `mu = V(Sigma_0^{-1} mu_0 + X'zbar)`, `Sigma = V + V X' diag(omega) X V`.
fn gaussian_moments(
    v: &SpdMatrix,
    vx: &Array2<f64>,
    prior_shift: &Array1<f64>,
    dataset: &OrdinalDataset,
    zbar: &Array1<f64>,
    omega: &Array1<f64>,
) -> GaussianPosterior {
    let mean = v.as_array().dot(&(prior_shift + &dataset.x().t().dot(zbar)));
    let weighted = vx * &omega.view().insert_axis(Axis(1));
    let mut cov = v.as_array() + &vx.t().dot(&weighted);
    symmetrize(&mut cov);
    GaussianPosterior { mean, covariance: SpdMatrix::from_trusted(cov) }
}

impl PmfPosterior {
    /// Closed-form mean and covariance of the marginal `q(beta)`.
    pub fn moments(&self) -> Result<GaussianPosterior> {
        let n = self.xi.len();
        if n == 0 {
            return Ok(GaussianPosterior { mean: self.prior.mean().clone(), covariance: self.prior.covariance().clone() });
        }
        let mut zbar = Array1::zeros(n);
        let mut omega = Array1::zeros(n);
        for i in 0..n {
            let (m, st) = tn_mean_stats(self.intervals[i], self.xi[i], self.sigma[i])?;
            zbar[i] = m;
            omega[i] = self.sigma[i] * self.sigma[i] * st.variance_ratio();
        }
        let vx = self.x.dot(self.v.as_array());
        let mean = self.v.as_array().dot(&(&self.prior_shift + &self.x.t().dot(&zbar)));
        let weighted = &vx * &omega.view().insert_axis(Axis(1));
        let mut cov = self.v.as_array() + &vx.t().dot(&weighted);
        symmetrize(&mut cov);
        Ok(GaussianPosterior { mean, covariance: SpdMatrix::from_trusted(cov) })
    }

    /// One joint draw of `z` from `prod_i q(z_i)`.
    pub(crate) fn sample_z(&self, rng: &mut RngStream) -> Array1<f64> {
        Array1::from_iter((0..self.xi.len()).map(|i| {
            let (a, b) = self.intervals[i].standardize(self.xi[i], self.sigma[i]);
            self.xi[i] + self.sigma[i] * standard_tn_sample(a, b, rng)
        }))
    }

    /// `V(Sigma_0^{-1} mu_0 + X'z)`, the mean of `p(beta | z)`.
    pub(crate) fn conditional_mean(&self, z: &Array1<f64>) -> Array1<f64> {
        self.v.as_array().dot(&(&self.prior_shift + &self.x.t().dot(z)))
    }
}

/// Draws `count` iid coefficient vectors from the marginal `q(beta)`: each draw
/// samples every `z_i` from its site and then `beta | z ~ N(V(Sigma_0^{-1} mu_0 + X'z), V)`.
/// Draw `d` uses its own child stream, so the result does not depend on the
/// number of worker threads.
pub fn pmf_sample_beta(post: &PmfPosterior, count: usize, rng: &mut RngStream) -> Result<Array2<f64>> {
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    let chol = post.v.cholesky()?;
    let p = post.v.dim();
    let base = RngStream::new(rng.next_u64(), rng.stream());
    let rows: Vec<Array1<f64>> = (0..count)
        .into_par_iter()
        .map(|d| {
            let mut r = base.split(d as u64);
            let z = post.sample_z(&mut r);
            let eps = Array1::from_iter((0..p).map(|_| r.standard_normal()));
            post.conditional_mean(&z) + chol.mul_lower(eps.view())
        })
        .collect();
    let mut out = Array2::zeros((count, p));
    for (d, row) in rows.into_iter().enumerate() {
        out.row_mut(d).assign(&row);
    }
    Ok(out)
}
