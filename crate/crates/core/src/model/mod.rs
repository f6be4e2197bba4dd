//! Datasets, priors, cutpoints and the result types shared by the fitters.

mod csv_io;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkern::{Interval, SpdMatrix};

pub use csv_io::{read_dataset_csv, read_design_csv, write_dataset_csv, DesignTable};

/// Ordinal responses `y_i in 1..=K` with an `n x p` design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalDataset {
    x: Array2<f64>,
    y: Vec<usize>,
    categories: usize,
    columns: Vec<String>,
}

impl OrdinalDataset {
    /// Validates responses (`1..=K`, no 0-based coding), `K >= 2`, `p >= 1`
    /// and finiteness of the design.
    pub fn new(x: Array2<f64>, y: Vec<i64>, categories: usize) -> Result<Self> {
        let columns = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_columns(x, y, categories, columns)
    }

    pub fn with_columns(x: Array2<f64>, y: Vec<i64>, categories: usize, columns: Vec<String>) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::DimensionMismatch("design matrix has no columns".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!("{} design rows vs {} responses", x.nrows(), y.len())));
        }
        if columns.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!("{} column names for {} columns", columns.len(), x.ncols())));
        }
        if let Some(((r, c), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("design entry ({r}, {c})")));
        }
        let y = y
            .into_iter()
            .enumerate()
            .map(|(row, v)| {
                if v >= 1 && (v as usize) <= categories {
                    Ok(v as usize)
                } else {
                    Err(Error::CategoryOutOfRange { row, value: v, categories })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if categories < 2 {
            return Err(Error::Config(format!("need at least 2 categories, got {categories}")));
        }
        Ok(Self { x, y, categories, columns })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of categories `K`.
    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    /// Responses, coded `1..=K`.
    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn category_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.categories];
        for &y in &self.y {
            counts[y - 1] += 1;
        }
        counts
    }

    /// Truncation interval `[alpha_{y_i - 1}, alpha_{y_i}]` of every observation.
    pub fn intervals(&self, thresholds: &Thresholds) -> Vec<Interval> {
        self.y.iter().map(|&y| thresholds.interval(y)).collect()
    }

    /// A copy restricted to the given rows.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let x = self.x.select(ndarray::Axis(0), rows);
        let y = rows.iter().map(|&r| self.y[r]).collect();
        Self { x, y, categories: self.categories, columns: self.columns.clone() }
    }
}

/// Gaussian prior `N(mean, covariance)` on the regression coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    mean: Array1<f64>,
    covariance: SpdMatrix,
}

impl GaussianPrior {
    pub fn new(mean: Array1<f64>, covariance: SpdMatrix) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(Error::DimensionMismatch(format!(
                "prior mean length {} vs covariance dimension {}",
                mean.len(),
                covariance.dim()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("prior mean".into()));
        }
        Ok(Self { mean, covariance })
    }

    /// `N(mean * 1, variance * I)`.
    pub fn isotropic(p: usize, mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::NotPositiveDefinite { row: 0, pivot: variance });
        }
        Self::new(Array1::from_elem(p, mean), SpdMatrix::from_diagonal(&vec![variance; p])?)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &SpdMatrix {
        &self.covariance
    }

    /// `(Sigma_0^{-1}, Sigma_0^{-1} mu_0)`.
    pub fn natural_parameters(&self) -> Result<(Array2<f64>, Array1<f64>)> {
        let chol = self.covariance.cholesky()?;
        let precision = chol.inverse();
        let shift = chol.solve_vec(self.mean.view());
        Ok((precision, shift))
    }
}

/// Strictly increasing cutpoints `alpha_1 < ... < alpha_{K-1}`; `alpha_0 = -inf`
/// and `alpha_K = +inf` are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Thresholds(Vec<f64>);

impl Thresholds {
    pub fn new(cutpoints: Vec<f64>) -> Result<Self> {
        if cutpoints.is_empty() {
            return Err(Error::Config("at least one cutpoint is required".into()));
        }
        if cutpoints.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("cutpoints".into()));
        }
        if let Some(k) = (1..cutpoints.len()).find(|&k| cutpoints[k] <= cutpoints[k - 1]) {
            return Err(Error::UnorderedThresholds(k));
        }
        Ok(Self(cutpoints))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of categories `K`.
    pub fn categories(&self) -> usize {
        self.0.len() + 1
    }

    /// `alpha_k` for `k in 0..=K`, including the infinite ends.
    pub fn alpha(&self, k: usize) -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else if k > self.0.len() {
            f64::INFINITY
        } else {
            self.0[k - 1]
        }
    }

    /// `[alpha_{y-1}, alpha_y]` for a response `y in 1..=K`.
    pub fn interval(&self, y: usize) -> Interval {
        Interval::new(self.alpha(y - 1), self.alpha(y)).expect("cutpoints are strictly increasing")
    }

    /// Log-increment coordinates: `tau_1 = alpha_1`, `tau_k = log(alpha_k - alpha_{k-1})`.
    pub fn to_tau(&self) -> Vec<f64> {
        let mut tau = Vec::with_capacity(self.0.len());
        tau.push(self.0[0]);
        tau.extend(self.0.windows(2).map(|w| (w[1] - w[0]).ln()));
        tau
    }

    /// Inverse of [`Thresholds::to_tau`]; any finite `tau` maps to ordered cutpoints.
    pub fn from_tau(tau: &[f64]) -> Result<Self> {
        if tau.is_empty() {
            return Err(Error::Config("tau must be non-empty".into()));
        }
        if tau.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("tau".into()));
        }
        let mut alpha = Vec::with_capacity(tau.len());
        alpha.push(tau[0]);
        for &t in &tau[1..] {
            let prev = *alpha.last().unwrap();
            alpha.push(prev + t.exp());
        }
        Self::new(alpha)
    }
}

impl TryFrom<Vec<f64>> for Thresholds {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Thresholds::new(v)
    }
}

impl From<Thresholds> for Vec<f64> {
    fn from(t: Thresholds) -> Self {
        t.0
    }
}

/// `tau_1 = alpha_1`, `tau_k = log(alpha_k - alpha_{k-1})`.
pub fn thresholds_to_tau(t: &Thresholds) -> Vec<f64> {
    t.to_tau()
}

pub fn tau_to_thresholds(tau: &[f64]) -> Result<Thresholds> {
    Thresholds::from_tau(tau)
}

/// Gaussian approximation `N(mean, covariance)` to `p(beta | y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: Array1<f64>,
    pub covariance: SpdMatrix,
}

impl GaussianPosterior {
    pub fn sd(&self) -> Array1<f64> {
        self.covariance.diag().mapv(f64::sqrt)
    }
}

/// Convergence record of one fit.
///
/// `trace` holds one objective value per iteration (an ELBO with its additive
/// constant dropped, or the EP marginal-likelihood approximation), so values
/// are comparable within a fit but not across priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitReport {
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub elapsed_seconds: f64,
    pub final_objective: f64,
    /// EP site updates skipped by the positive-definiteness guard.
    pub skipped_updates: usize,
    pub notes: Vec<String>,
}

/// Checks that a dataset, prior and cutpoint vector fit together.
pub fn validate(dataset: &OrdinalDataset, prior: &GaussianPrior, thresholds: &Thresholds) -> Result<()> {
    if dataset.p() == 0 {
        return Err(Error::DimensionMismatch("p = 0".into()));
    }
    if prior.dim() != dataset.p() {
        return Err(Error::DimensionMismatch(format!("prior dimension {} vs {} covariates", prior.dim(), dataset.p())));
    }
    if thresholds.categories() != dataset.categories() {
        return Err(Error::DimensionMismatch(format!(
            "{} cutpoints for {} categories",
            thresholds.as_slice().len(),
            dataset.categories()
        )));
    }
    if let Some((row, &v)) = dataset.y().iter().enumerate().find(|(_, &v)| v < 1 || v > dataset.categories()) {
        return Err(Error::CategoryOutOfRange { row, value: v as i64, categories: dataset.categories() });
    }
    if dataset.x().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("design matrix".into()));
    }
    // Re-check ordering in case the cutpoints were built through serde.
    Thresholds::new(thresholds.as_slice().to_vec())?;
    Ok(())
}
