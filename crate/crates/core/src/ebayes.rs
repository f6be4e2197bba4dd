//! Empirical-Bayes cutpoints: alternate a fitter with Newton steps on
//! `sum_i log[Phi(alpha_{y_i} - o_i) - Phi(alpha_{y_i-1} - o_i)]` at the
//! offsets `o_i = x_i' betabar`, working in log-increment coordinates.

use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::ep::{fit_ep, fit_ep_from, EpFit, EpOptions};
use crate::error::{Error, Result};
use crate::mfvb::{fit_mfvb, fit_mfvb_from, MfvbFit, MfvbOptions};
use crate::model::{validate, FitReport, GaussianPosterior, GaussianPrior, OrdinalDataset, Thresholds};
use crate::numkern::{interval_stats, log_norm_pdf, norm_quantile, Cholesky};
use crate::pmf::{fit_pmf, fit_pmf_from, PmfFit, PmfOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mfvb,
    Pmf,
    Ep,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mfvb, Method::Pmf, Method::Ep];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mfvb => "mfvb",
            Method::Pmf => "pmf",
            Method::Ep => "ep",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mfvb" => Ok(Method::Mfvb),
            "pmf" => Ok(Method::Pmf),
            "ep" => Ok(Method::Ep),
            other => Err(Error::Config(format!("unknown method `{other}` (expected mfvb, pmf or ep)"))),
        }
    }
}

/// Output of any of the three fitters.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum MethodFit {
    Mfvb(MfvbFit),
    Pmf(PmfFit),
    Ep(EpFit),
}

impl MethodFit {
    pub fn method(&self) -> Method {
        match self {
            MethodFit::Mfvb(_) => Method::Mfvb,
            MethodFit::Pmf(_) => Method::Pmf,
            MethodFit::Ep(_) => Method::Ep,
        }
    }

    /// Gaussian summary of `q(beta)`; for PMF these are the closed-form marginal moments.
    pub fn gaussian(&self) -> Result<GaussianPosterior> {
        match self {
            MethodFit::Mfvb(f) => Ok(f.posterior.clone()),
            MethodFit::Pmf(f) => match &f.moments {
                Some(m) => Ok(m.clone()),
                None => f.posterior.moments(),
            },
            MethodFit::Ep(f) => Ok(f.posterior.clone()),
        }
    }

    pub fn report(&self) -> &FitReport {
        match self {
            MethodFit::Mfvb(f) => &f.report,
            MethodFit::Pmf(f) => &f.report,
            MethodFit::Ep(f) => &f.report,
        }
    }
}

/// Per-method options used by [`fit_method`] and [`estimate_thresholds`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitterOptions {
    pub mfvb: MfvbOptions,
    pub pmf: PmfOptions,
    pub ep: EpOptions,
}

pub fn fit_method(dataset: &OrdinalDataset, prior: &GaussianPrior, thresholds: &Thresholds, method: Method, options: &FitterOptions) -> Result<MethodFit> {
    Ok(match method {
        Method::Mfvb => MethodFit::Mfvb(fit_mfvb(dataset, prior, thresholds, &options.mfvb)?),
        Method::Pmf => MethodFit::Pmf(fit_pmf(dataset, prior, thresholds, &options.pmf)?),
        Method::Ep => MethodFit::Ep(fit_ep(dataset, prior, thresholds, &options.ep)?),
    })
}

/// As [`fit_method`], warm-started from `init` when it is a fit of the same method.
pub fn fit_method_from(
    dataset: &OrdinalDataset,
    prior: &GaussianPrior,
    thresholds: &Thresholds,
    method: Method,
    options: &FitterOptions,
    init: Option<&MethodFit>,
) -> Result<MethodFit> {
    Ok(match (method, init) {
        (Method::Mfvb, Some(MethodFit::Mfvb(f))) => MethodFit::Mfvb(fit_mfvb_from(dataset, prior, thresholds, &options.mfvb, Some(&f.state))?),
        (Method::Pmf, Some(MethodFit::Pmf(f))) => MethodFit::Pmf(fit_pmf_from(dataset, prior, thresholds, &options.pmf, Some(&f.state))?),
        (Method::Ep, Some(MethodFit::Ep(f))) => MethodFit::Ep(fit_ep_from(dataset, prior, thresholds, &options.ep, Some((&f.global, &f.sites)))?),
        _ => fit_method(dataset, prior, thresholds, method, options)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EbOptions {
    pub method: Method,
    pub outer_tolerance: f64,
    pub max_outer_iterations: usize,
    pub fitters: FitterOptions,
}

impl EbOptions {
    pub fn new(method: Method) -> Self {
        Self { method, outer_tolerance: 1e-6, max_outer_iterations: 50, fitters: FitterOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct EbFit {
    pub thresholds: Thresholds,
    /// The chosen fitter, refitted at the returned cutpoints.
    pub fit: MethodFit,
    /// Outer loop record; `trace` holds the conditional log-likelihood after each Newton phase.
    pub report: FitReport,
}

/// Stable `phi(t) / [Phi(b) - Phi(a)]` given `log[Phi(b) - Phi(a)]`.
fn pdf_ratio(t: f64, log_mass: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else {
        (log_norm_pdf(t) - log_mass).exp()
    }
}

/// Per-observation pieces of the conditional log-likelihood and its derivatives in `alpha`.
struct AlphaDerivatives {
    value: f64,
    grad: Array1<f64>,
    /// Tridiagonal Hessian: diagonal and first off-diagonal.
    diag: Array1<f64>,
    off: Array1<f64>,
}

fn alpha_derivatives(offsets: &Array1<f64>, y: &[usize], thresholds: &Thresholds) -> Result<AlphaDerivatives> {
    let m = thresholds.as_slice().len();
    let mut out = AlphaDerivatives {
        value: 0.0,
        grad: Array1::zeros(m),
        diag: Array1::zeros(m),
        off: Array1::zeros(m.saturating_sub(1)),
    };
    for (i, &yi) in y.iter().enumerate() {
        let a = thresholds.alpha(yi - 1) - offsets[i];
        let b = thresholds.alpha(yi) - offsets[i];
        let st = interval_stats(a, b)?;
        out.value += st.log_mass;
        let ra = pdf_ratio(a, st.log_mass);
        let rb = pdf_ratio(b, st.log_mass);
        // d/db log M = rb, d/da log M = -ra.
        if yi < m + 1 {
            let k = yi - 1;
            out.grad[k] += rb;
            out.diag[k] += -b * rb - rb * rb;
        }
        if yi > 1 {
            let k = yi - 2;
            out.grad[k] -= ra;
            out.diag[k] += a * ra - ra * ra;
        }
        if yi > 1 && yi < m + 1 {
            out.off[yi - 2] += ra * rb;
        }
    }
    Ok(out)
}

/// Gradient in `alpha` of `sum_i log[Phi(alpha_{y_i} - x_i'betabar) - Phi(alpha_{y_i-1} - x_i'betabar)]`.
pub fn grad_alpha(betabar: &Array1<f64>, dataset: &OrdinalDataset, thresholds: &Thresholds) -> Result<Array1<f64>> {
    if betabar.len() != dataset.p() {
        return Err(Error::DimensionMismatch(format!("{} coefficients for {} covariates", betabar.len(), dataset.p())));
    }
    if thresholds.categories() != dataset.categories() {
        return Err(Error::DimensionMismatch("cutpoints do not match the number of categories".into()));
    }
    let offsets = dataset.x().dot(betabar);
    Ok(alpha_derivatives(&offsets, dataset.y(), thresholds)?.grad)
}

/// Hessian in `alpha` of the same objective, as a dense matrix.
pub fn hessian_alpha(betabar: &Array1<f64>, dataset: &OrdinalDataset, thresholds: &Thresholds) -> Result<Array2<f64>> {
    let offsets = dataset.x().dot(betabar);
    let d = alpha_derivatives(&offsets, dataset.y(), thresholds)?;
    Ok(tridiagonal(&d.diag, &d.off))
}

fn tridiagonal(diag: &Array1<f64>, off: &Array1<f64>) -> Array2<f64> {
    let m = diag.len();
    let mut h = Array2::from_diag(diag);
    for k in 0..off.len() {
        h[[k, k + 1]] = off[k];
        h[[k + 1, k]] = off[k];
    }
    debug_assert_eq!(h.nrows(), m);
    h
}

/// Value, gradient and Hessian of the objective in `tau`.
/// Value, `tau`-gradient, `tau`-Hessian and `alpha`-gradient.
type TauDerivatives = (f64, Array1<f64>, Array2<f64>, Array1<f64>);

fn tau_derivatives(offsets: &Array1<f64>, y: &[usize], tau: &[f64]) -> Result<TauDerivatives> {
    let t = Thresholds::from_tau(tau)?;
    let d = alpha_derivatives(offsets, y, &t)?;
    let m = tau.len();
    // d alpha_j / d tau_k = [j >= k] * (1 if k == 0 else exp(tau_k)).
    let mut jac = Array2::zeros((m, m));
    for k in 0..m {
        let scale = if k == 0 { 1.0 } else { tau[k].exp() };
        for j in k..m {
            jac[[j, k]] = scale;
        }
    }
    let grad_tau = jac.t().dot(&d.grad);
    let mut hess = jac.t().dot(&tridiagonal(&d.diag, &d.off)).dot(&jac);
    for k in 1..m {
        let tail: f64 = d.grad.iter().skip(k).sum();
        hess[[k, k]] += tau[k].exp() * tail;
    }
    Ok((d.value, grad_tau, hess, d.grad))
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NewtonOutcome {
    pub tau: Vec<f64>,
    pub value: f64,
    pub grad_alpha_norm: f64,
    pub used_fallback: bool,
    pub steps: usize,
}

const NEWTON_MAX_STEPS: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-10;

/// Maximizes the conditional log-likelihood in `tau` at fixed offsets.
pub(crate) fn newton_tau(offsets: &Array1<f64>, y: &[usize], tau0: &[f64]) -> Result<NewtonOutcome> {
    let mut tau = tau0.to_vec();
    let (mut value, mut grad, mut hess, mut ga) = tau_derivatives(offsets, y, &tau)?;
    let m = tau.len();
    let mut steps = 0;
    let mut stalled = false;
    while steps < NEWTON_MAX_STEPS {
        let gnorm = ga.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if gnorm < NEWTON_GRAD_TOL {
            break;
        }
        // Levenberg shift until -H + lambda I is positive definite.
        let neg = -&hess;
        let mut lambda = 0.0;
        let chol = loop {
            let shifted = &neg + &(Array2::<f64>::eye(m) * lambda);
            if let Ok(c) = Cholesky::factor(shifted.view()) {
                break c;
            }
            lambda = if lambda == 0.0 { 1e-8 * (1.0 + neg.diag().iter().fold(0.0_f64, |a, v| a.max(v.abs()))) } else { lambda * 10.0 };
            if !lambda.is_finite() {
                stalled = true;
                break Cholesky::factor(Array2::<f64>::eye(m).view())?;
            }
        };
        if stalled {
            break;
        }
        let dir = chol.solve_vec(grad.view());
        let slope = grad.dot(&dir);
        // Below this predicted gain the objective is compared at round-off level.
        let noise = 1e3 * f64::EPSILON * (1.0 + value.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = tau.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
            if let Ok(res) = tau_derivatives(offsets, y, &cand) {
                let armijo = res.0 >= value + 1e-4 * step * slope;
                let flat = step * slope < noise && max_abs(&res.3) < gnorm;
                if res.0.is_finite() && (armijo || flat) {
                    accepted = Some((cand, res));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, res)) => {
                tau = cand;
                (value, grad, hess, ga) = res;
                steps += 1;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    let gnorm = ga.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    // Armijo can stall at round-off level once the gradient is tiny; that is a converged point.
    if (stalled && gnorm > 1e-6) || !value.is_finite() {
        let (tau, value) = golden_section_coordinates(offsets, y, &tau)?;
        let (_, _, _, ga) = tau_derivatives(offsets, y, &tau)?;
        return Ok(NewtonOutcome {
            tau,
            value,
            grad_alpha_norm: ga.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
            used_fallback: true,
            steps,
        });
    }
    Ok(NewtonOutcome { tau, value, grad_alpha_norm: gnorm, used_fallback: false, steps })
}

fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

fn objective_tau(offsets: &Array1<f64>, y: &[usize], tau: &[f64]) -> f64 {
    let Ok(t) = Thresholds::from_tau(tau) else {
        return f64::NEG_INFINITY;
    };
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        match interval_stats(t.alpha(yi - 1) - offsets[i], t.alpha(yi) - offsets[i]) {
            Ok(st) => total += st.log_mass,
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    total
}

/// Derivative-free fallback: cyclic golden-section search on each `tau_k`.
fn golden_section_coordinates(offsets: &Array1<f64>, y: &[usize], tau0: &[f64]) -> Result<(Vec<f64>, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut tau = tau0.to_vec();
    let mut value = objective_tau(offsets, y, &tau);
    for _ in 0..200 {
        let before = tau.clone();
        for k in 0..tau.len() {
            let f = |t: f64, tau: &mut Vec<f64>| {
                let old = tau[k];
                tau[k] = t;
                let v = objective_tau(offsets, y, tau);
                tau[k] = old;
                v
            };
            let (mut lo, mut hi) = (tau[k] - 4.0, tau[k] + 4.0);
            let mut c = hi - INV_PHI * (hi - lo);
            let mut d = lo + INV_PHI * (hi - lo);
            let (mut fc, mut fd) = (f(c, &mut tau), f(d, &mut tau));
            while hi - lo > 1e-10 {
                if fc > fd {
                    hi = d;
                    d = c;
                    fd = fc;
                    c = hi - INV_PHI * (hi - lo);
                    fc = f(c, &mut tau);
                } else {
                    lo = c;
                    c = d;
                    fc = fd;
                    d = lo + INV_PHI * (hi - lo);
                    fd = f(d, &mut tau);
                }
            }
            let cand = 0.5 * (lo + hi);
            let fv = f(cand, &mut tau);
            if fv > value {
                tau[k] = cand;
                value = fv;
            }
        }
        let change = tau.iter().zip(&before).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
        if change < 1e-9 {
            break;
        }
    }
    if !value.is_finite() {
        return Err(Error::Domain("threshold search found no finite objective".into()));
    }
    Ok((tau, value))
}

/// Rejects designs with a constant non-zero column, which is confounded with the cutpoints.
pub fn check_no_intercept(dataset: &OrdinalDataset) -> Result<()> {
    if dataset.n() < 2 {
        return Ok(());
    }
    for (j, col) in dataset.x().columns().into_iter().enumerate() {
        let first = col[0];
        if first != 0.0 && col.iter().all(|&v| v == first) {
            return Err(Error::InterceptColumn(j));
        }
    }
    Ok(())
}

/// Cutpoints at the probit of the cumulative category frequencies.
pub fn initial_thresholds(dataset: &OrdinalDataset) -> Result<Thresholds> {
    let counts = dataset.category_counts();
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCategory(k + 1));
    }
    let n = dataset.n() as f64;
    let mut cum = 0usize;
    let alpha = counts[..counts.len() - 1]
        .iter()
        .map(|&c| {
            cum += c;
            norm_quantile(cum as f64 / n)
        })
        .collect();
    Thresholds::new(alpha)
}

/// One fit-then-Newton map in `tau`; returns the new `tau` and the largest cutpoint move.
fn outer_step(
    dataset: &OrdinalDataset,
    prior: &GaussianPrior,
    tau: &[f64],
    method: Method,
    fitters: &FitterOptions,
    last: &mut Option<MethodFit>,
    trace: &mut Vec<f64>,
    notes: &mut Vec<String>,
) -> Result<(Vec<f64>, f64)> {
    let current = Thresholds::from_tau(tau)?;
    let fit = fit_method_from(dataset, prior, &current, method, fitters, last.as_ref())?;
    let offsets = dataset.x().dot(&fit.gaussian()?.mean);
    *last = Some(fit);
    let outcome = newton_tau(&offsets, dataset.y(), tau)?;
    trace.push(outcome.value);
    if outcome.used_fallback {
        notes.push(format!("outer iteration {}: Newton stalled, used golden-section search", trace.len()));
    }
    let next = Thresholds::from_tau(&outcome.tau)?;
    let change = next.as_slice().iter().zip(current.as_slice()).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
    Ok((outcome.tau, change))
}

/// Squared extrapolation from three successive iterates of a fixed-point map.
fn squarem(t0: &[f64], t1: &[f64], t2: &[f64]) -> Option<Vec<f64>> {
    let r: Vec<f64> = t1.iter().zip(t0).map(|(a, b)| a - b).collect();
    let v: Vec<f64> = t2.iter().zip(t1).zip(&r).map(|((a, b), r)| a - b - r).collect();
    let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(vn > 0.0) {
        return None;
    }
    let step = -(rn / vn).clamp(1.0, 64.0);
    let cand: Vec<f64> = t0.iter().zip(&r).zip(&v).map(|((t, r), v)| t - 2.0 * step * r + step * step * v).collect();
    cand.iter().all(|x| x.is_finite()).then_some(cand)
}

/// Alternates the chosen fitter with a Newton search over the cutpoints until
/// the cutpoints move by less than `outer_tolerance`, then refits at the final cutpoints.
/// Every other pair of alternations is followed by a squared extrapolation step,
/// kept only if the next alternation moves the cutpoints less than the first of the pair did.
pub fn estimate_thresholds(dataset: &OrdinalDataset, prior: &GaussianPrior, options: &EbOptions) -> Result<EbFit> {
    if !(options.outer_tolerance > 0.0) {
        return Err(Error::Config("outer tolerance must be positive".into()));
    }
    if options.max_outer_iterations == 0 {
        return Err(Error::Config("max_outer_iterations must be positive".into()));
    }
    let start = Instant::now();
    let mut thresholds = initial_thresholds(dataset)?;
    validate(dataset, prior, &thresholds)?;
    check_no_intercept(dataset)?;
    let mut fitters = options.fitters;
    fitters.pmf.compute_moments = true;

    let mut trace = Vec::new();
    let mut notes = Vec::new();
    let mut converged = false;
    let mut tau = thresholds.to_tau();
    // Last plain step and its change, kept in case an extrapolation does worse.
    let mut fallback: Option<(Vec<f64>, f64)> = None;
    // Each fit starts from the previous one.
    let mut last: Option<MethodFit> = None;
    while trace.len() < options.max_outer_iterations {
        let (next, change) = outer_step(dataset, prior, &tau, options.method, &fitters, &mut last, &mut trace, &mut notes)?;
        if let Some((safe, safe_change)) = fallback.take() {
            if !(change < safe_change) {
                tau = safe;
                continue;
            }
        }
        if change < options.outer_tolerance || trace.len() >= options.max_outer_iterations {
            converged = change < options.outer_tolerance;
            tau = next;
            break;
        }
        let (next2, change2) = outer_step(dataset, prior, &next, options.method, &fitters, &mut last, &mut trace, &mut notes)?;
        if change2 < options.outer_tolerance || trace.len() >= options.max_outer_iterations {
            converged = change2 < options.outer_tolerance;
            tau = next2;
            break;
        }
        match squarem(&tau, &next, &next2) {
            Some(cand) => {
                fallback = Some((next2, change));
                tau = cand;
            }
            None => tau = next2,
        }
    }
    thresholds = Thresholds::from_tau(&tau)?;
    let fit = fit_method_from(dataset, prior, &thresholds, options.method, &fitters, last.as_ref())?;
    let report = FitReport {
        iterations: trace.len(),
        converged,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        final_objective: *trace.last().expect("at least one outer iteration"),
        trace,
        skipped_updates: fit.report().skipped_updates,
        notes,
    };
    Ok(EbFit { thresholds, fit, report })
}
