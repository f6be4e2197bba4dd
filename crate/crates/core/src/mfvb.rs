//! Fully factorized mean-field variational Bayes, `q(beta) prod_i q(z_i)`,
//! fitted by coordinate ascent.

use std::time::Instant;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate, FitReport, GaussianPosterior, GaussianPrior, OrdinalDataset, Thresholds};
use crate::numkern::{tn_mean_stats, Cholesky, Interval, SpdMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfvbOptions {
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for MfvbOptions {
    fn default() -> Self {
        Self { epsilon: 1e-6, max_iterations: 1000 }
    }
}

impl MfvbOptions {
    pub(crate) fn check(&self) -> Result<()> {
        check_tolerance(self.epsilon, self.max_iterations)
    }
}

pub(crate) fn check_tolerance(epsilon: f64, max_iterations: usize) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if max_iterations == 0 {
        return Err(Error::Config("max_iterations must be positive".into()));
    }
    Ok(())
}

/// Variational parameters after a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct MfvbState {
    /// `E_q[z_i]`.
    pub zbar: Array1<f64>,
    /// `E_q[beta]`.
    pub betabar: Array1<f64>,
    /// `(Sigma_0^{-1} + X'X)^{-1}`, the covariance of `q(beta)`.
    pub v: SpdMatrix,
    /// `Sigma_0^{-1} mu_0`.
    pub prior_shift: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct MfvbFit {
    pub posterior: GaussianPosterior,
    pub state: MfvbState,
    pub report: FitReport,
}

/// `V = (Sigma_0^{-1} + X'X)^{-1}`; for an empty design this is `Sigma_0` itself.
pub fn precompute_v(x: ArrayView2<'_, f64>, prior: &GaussianPrior) -> Result<SpdMatrix> {
    if x.nrows() == 0 {
        return Ok(prior.covariance().clone());
    }
    let (mut precision, _) = prior.natural_parameters()?;
    precision += &x.t().dot(&x);
    Ok(SpdMatrix::from_trusted(Cholesky::factor(precision.view())?.inverse()))
}

/// Initial `E[z_i]`: truncated-normal mean at the prior linear predictor with unit scale.
pub(crate) fn initial_zbar(dataset: &OrdinalDataset, prior: &GaussianPrior, intervals: &[Interval]) -> Result<Array1<f64>> {
    let eta0 = dataset.x().dot(prior.mean());
    intervals
        .iter()
        .zip(eta0.iter())
        .map(|(&iv, &eta)| tn_mean_stats(iv, eta, 1.0).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()
        .map(Array1::from)
}

/// `-0.5 (b - mu_0)' Sigma_0^{-1} (b - mu_0)`.
pub(crate) fn prior_quadratic(prior_chol: &Cholesky, prior: &GaussianPrior, beta: &Array1<f64>) -> f64 {
    let d = beta - prior.mean();
    let mut w = d;
    prior_chol.forward_in_place(&mut w);
    -0.5 * w.dot(&w)
}

/// ELBO with its additive constant dropped:
/// `sum_i log[Phi(v_i) - Phi(u_i)] - 0.5 (betabar - mu_0)' Sigma_0^{-1} (betabar - mu_0)`.
pub fn elbo_mfvb(state: &MfvbState, dataset: &OrdinalDataset, prior: &GaussianPrior, thresholds: &Thresholds) -> Result<f64> {
    if state.betabar.len() != dataset.p() {
        return Err(Error::DimensionMismatch(format!("state has {} coefficients, data {}", state.betabar.len(), dataset.p())));
    }
    let chol = prior.covariance().cholesky()?;
    let eta = dataset.x().dot(&state.betabar);
    let mut total = 0.0;
    for (i, &y) in dataset.y().iter().enumerate() {
        let (_, stats) = tn_mean_stats(thresholds.interval(y), eta[i], 1.0)?;
        total += stats.log_mass;
    }
    Ok(total + prior_quadratic(&chol, prior, &state.betabar))
}

/// `0.5 (log|V| - log|Sigma_0|)`, the part of the full ELBO that depends on
/// `X` and the prior only. It is identical for MFVB and PMF.
pub(crate) fn shared_elbo_constant(v: &SpdMatrix, prior: &GaussianPrior) -> Result<f64> {
    Ok(0.5 * (v.cholesky()?.log_det() - prior.covariance().cholesky()?.log_det()))
}

/// The ELBO including every constant, so that it lower-bounds `log p(y)`.
pub fn elbo_mfvb_full(state: &MfvbState, dataset: &OrdinalDataset, prior: &GaussianPrior, thresholds: &Thresholds) -> Result<f64> {
    Ok(elbo_mfvb(state, dataset, prior, thresholds)? + shared_elbo_constant(&state.v, prior)?)
}

/// Fits the mean-field approximation. The `z` update uses the `beta` mean from
/// the same sweep. A sweep counts as converged once the ELBO gain and the
/// largest change in `E[beta]` are both below `epsilon`. Hitting
/// `max_iterations` returns the last state with `converged = false`.
pub fn fit_mfvb(dataset: &OrdinalDataset, prior: &GaussianPrior, thresholds: &Thresholds, options: &MfvbOptions) -> Result<MfvbFit> {
    fit_mfvb_from(dataset, prior, thresholds, options, None)
}

/// As [`fit_mfvb`], starting from `init` (typically a fit of the same data and
/// prior at nearby cutpoints) instead of the prior. `init.v` is reused as is.
pub fn fit_mfvb_from(
    dataset: &OrdinalDataset,
    prior: &GaussianPrior,
    thresholds: &Thresholds,
    options: &MfvbOptions,
    init: Option<&MfvbState>,
) -> Result<MfvbFit> {
    validate(dataset, prior, thresholds)?;
    options.check()?;
    if let Some(s) = init {
        if s.zbar.len() != dataset.n() || s.betabar.len() != dataset.p() || s.v.dim() != dataset.p() {
            return Err(Error::DimensionMismatch("MFVB starting state does not match the dataset".into()));
        }
    }
    let start = Instant::now();
    let prior_chol = prior.covariance().cholesky()?;
    let prior_shift = prior_chol.solve_vec(prior.mean().view());
    let v = match init {
        Some(s) => s.v.clone(),
        None => precompute_v(dataset.x(), prior)?,
    };
    let intervals = dataset.intervals(thresholds);
    let x = dataset.x();

    if dataset.n() == 0 {
        let state = MfvbState { zbar: Array1::zeros(0), betabar: prior.mean().clone(), v, prior_shift };
        let report = FitReport {
            trace: vec![0.0],
            iterations: 1,
            converged: true,
            elapsed_seconds: start.elapsed().as_secs_f64(),
            final_objective: 0.0,
            ..FitReport::default()
        };
        let posterior = GaussianPosterior { mean: prior.mean().clone(), covariance: state.v.clone() };
        return Ok(MfvbFit { posterior, state, report });
    }

    let (mut zbar, mut betabar) = match init {
        Some(s) => (s.zbar.clone(), s.betabar.clone()),
        None => (initial_zbar(dataset, prior, &intervals)?, prior.mean().clone()),
    };
    let mut trace = Vec::new();
    let mut converged = false;
    while trace.len() < options.max_iterations {
        let next = v.as_array().dot(&(&prior_shift + &x.t().dot(&zbar)));
        let step = max_abs_diff(&next, &betabar);
        betabar = next;
        let eta = x.dot(&betabar);
        let mut log_lik = 0.0;
        for i in 0..dataset.n() {
            let (m, stats) = tn_mean_stats(intervals[i], eta[i], 1.0)?;
            zbar[i] = m;
            log_lik += stats.log_mass;
        }
        let elbo = log_lik + prior_quadratic(&prior_chol, prior, &betabar);
        let previous = trace.last().copied();
        trace.push(elbo);
        if let Some(prev) = previous {
            if elbo - prev < options.epsilon && step < options.epsilon {
                converged = true;
                break;
            }
        }
    }

    let state = MfvbState { zbar, betabar, v, prior_shift };
    let posterior = GaussianPosterior { mean: state.betabar.clone(), covariance: state.v.clone() };
    let report = FitReport {
        iterations: trace.len(),
        converged,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        final_objective: *trace.last().expect("at least one sweep"),
        trace,
        ..FitReport::default()
    };
    Ok(MfvbFit { posterior, state, report })
}

pub(crate) fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}
