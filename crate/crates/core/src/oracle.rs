//! Reference posterior by data-augmentation Gibbs sampling at fixed cutpoints,
//! and the KDE-based accuracy score for comparing a marginal with the samples.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfvb::precompute_v;
use crate::model::{validate, GaussianPrior, OrdinalDataset, Thresholds};
use crate::numkern::{norm_pdf, standard_tn_sample, tn_mean_stats, Interval, RngStream};

pub const MIN_SCORE_SAMPLES: usize = 100;
pub const KDE_GRID_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GibbsOptions {
    /// Retained draws.
    pub iterations: usize,
    pub burn_in: usize,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self { iterations: 5000, burn_in: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    /// One row per retained draw.
    pub draws: Array2<f64>,
    pub burn_in: usize,
    pub seed: u64,
    pub stream: u64,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn mean(&self) -> Array1<f64> {
        self.draws.mean_axis(Axis(0)).expect("at least one draw")
    }

    /// Sample standard deviations with the `m - 1` divisor.
    pub fn sd(&self) -> Array1<f64> {
        self.draws.std_axis(Axis(0), 1.0)
    }

    pub fn column(&self, j: usize) -> Array1<f64> {
        self.draws.column(j).to_owned()
    }

    /// Header `beta_1,...,beta_p`, then one row per draw.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.dim()).map(|j| format!("beta_{j}")).collect();
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for row in self.draws.rows() {
            w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Alternates `beta | z ~ N(V(Sigma_0^{-1} mu_0 + X'z), V)` and
/// `z_i | beta ~ TN(interval_i, x_i'beta, 1)`.
pub(crate) fn gibbs_with_intervals(
    x: ArrayView2<'_, f64>,
    prior: &GaussianPrior,
    intervals: &[Interval],
    options: &GibbsOptions,
    rng: &mut RngStream,
) -> Result<PosteriorSamples> {
    if options.iterations == 0 {
        return Err(Error::Config("iterations must be positive".into()));
    }
    let (seed, stream) = (rng.seed(), rng.stream());
    let n = x.nrows();
    let p = x.ncols();
    let v = precompute_v(x, prior)?;
    let chol = v.cholesky()?;
    let prior_shift = prior.covariance().cholesky()?.solve_vec(prior.mean().view());
    let start = x.dot(prior.mean());
    let mut z = Array1::zeros(n);
    for i in 0..n {
        z[i] = tn_mean_stats(intervals[i], start[i], 1.0)?.0;
    }
    let mut draws = Array2::zeros((options.iterations, p));
    let mut eps = Array1::zeros(p);
    for it in 0..options.burn_in + options.iterations {
        let center = v.as_array().dot(&(&prior_shift + &x.t().dot(&z)));
        eps.mapv_inplace(|_| rng.standard_normal());
        let beta = center + chol.mul_lower(eps.view());
        let eta = x.dot(&beta);
        for i in 0..n {
            let (a, b) = intervals[i].standardize(eta[i], 1.0);
            z[i] = eta[i] + standard_tn_sample(a, b, rng);
        }
        if it >= options.burn_in {
            draws.row_mut(it - options.burn_in).assign(&beta);
        }
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite Gibbs draw".into()));
    }
    Ok(PosteriorSamples { draws, burn_in: options.burn_in, seed, stream })
}

pub fn gibbs_fit(dataset: &OrdinalDataset, prior: &GaussianPrior, thresholds: &Thresholds, options: &GibbsOptions, rng: &mut RngStream) -> Result<PosteriorSamples> {
    validate(dataset, prior, thresholds)?;
    gibbs_with_intervals(dataset.x(), prior, &dataset.intervals(thresholds), options, rng)
}

/// Independent chains on child streams `0..chains` of `rng`, run in parallel.
pub fn gibbs_chains(
    dataset: &OrdinalDataset,
    prior: &GaussianPrior,
    thresholds: &Thresholds,
    options: &GibbsOptions,
    chains: usize,
    rng: &mut RngStream,
) -> Result<Vec<PosteriorSamples>> {
    validate(dataset, prior, thresholds)?;
    let base = RngStream::new(rng.next_u64(), rng.stream());
    let intervals = dataset.intervals(thresholds);
    (0..chains)
        .into_par_iter()
        .map(|c| gibbs_with_intervals(dataset.x(), prior, &intervals, options, &mut base.split(c as u64)))
        .collect()
}

/// An approximate marginal density for one coefficient.
#[derive(Clone)]
pub enum ApproxMarginal {
    Gaussian { mean: f64, sd: f64 },
    Density(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for ApproxMarginal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApproxMarginal::Gaussian { mean, sd } => f.debug_struct("Gaussian").field("mean", mean).field("sd", sd).finish(),
            ApproxMarginal::Density(_) => f.write_str("Density(..)"),
        }
    }
}

impl ApproxMarginal {
    pub fn density(&self, x: f64) -> f64 {
        match self {
            ApproxMarginal::Gaussian { mean, sd } => norm_pdf((x - mean) / sd) / sd,
            ApproxMarginal::Density(f) => f(x),
        }
    }

    fn support(&self) -> Option<(f64, f64)> {
        match self {
            ApproxMarginal::Gaussian { mean, sd } => Some((mean - 4.0 * sd, mean + 4.0 * sd)),
            ApproxMarginal::Density(_) => None,
        }
    }
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone)]
pub struct Kde {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl Kde {
    /// Bandwidth `0.9 min(sd, IQR / 1.34) m^{-1/5}`.
    pub fn silverman(samples: &[f64]) -> Result<Self> {
        let m = samples.len();
        if m < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: m });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("samples".into()));
        }
        let mean = samples.iter().sum::<f64>() / m as f64;
        let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let bandwidth = 0.9 * spread * (m as f64).powf(-0.2);
        if !(bandwidth > 0.0) {
            return Err(Error::Domain("samples have zero spread".into()));
        }
        Ok(Self { samples: sorted, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        // Kernels further than 10h away contribute below 1e-22 each.
        let lo = self.samples.partition_point(|&s| s < x - 10.0 * h);
        let hi = self.samples.partition_point(|&s| s <= x + 10.0 * h);
        let sum: f64 = self.samples[lo..hi].iter().map(|s| norm_pdf((x - s) / h)).sum();
        sum / (self.samples.len() as f64 * h)
    }

    fn range(&self) -> (f64, f64) {
        (self.samples[0], self.samples[self.samples.len() - 1])
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `100 * trapz(min(f, g))` on an evenly spaced grid; equals
/// `100 (1 - TV(f, g))` when both densities integrate to one over the grid.
pub(crate) fn overlap_score(f: &(dyn Fn(f64) -> f64 + Sync), g: &(dyn Fn(f64) -> f64 + Sync), lo: f64, hi: f64) -> f64 {
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    let vals: Vec<f64> = (0..KDE_GRID_POINTS)
        .into_par_iter()
        .map(|j| {
            let x = lo + step * j as f64;
            f(x).min(g(x))
        })
        .collect();
    let inner: f64 = vals[1..KDE_GRID_POINTS - 1].iter().sum();
    let area = step * (inner + 0.5 * (vals[0] + vals[KDE_GRID_POINTS - 1]));
    (100.0 * area).clamp(0.0, 100.0)
}

/// Accuracy of `approx` for coordinate `coordinate` (0-based) against a KDE
/// of the sampled marginal. The grid spans the samples and, for a Gaussian
/// approximation, its mean plus or minus four sds, padded by four bandwidths.
pub fn accuracy_score(samples: &PosteriorSamples, approx: &ApproxMarginal, coordinate: usize) -> Result<f64> {
    if coordinate >= samples.dim() {
        return Err(Error::DimensionMismatch(format!("coordinate {coordinate} out of range for {} coefficients", samples.dim())));
    }
    if samples.len() < MIN_SCORE_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_SCORE_SAMPLES, got: samples.len() });
    }
    if let ApproxMarginal::Gaussian { mean, sd } = approx {
        if !(sd.is_finite() && *sd > 0.0 && mean.is_finite()) {
            return Err(Error::Domain("approximate marginal needs a finite mean and positive sd".into()));
        }
    }
    let col = samples.column(coordinate);
    let kde = Kde::silverman(col.as_slice().expect("owned column is contiguous"))?;
    let (mut lo, mut hi) = kde.range();
    if let Some((a, b)) = approx.support() {
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let pad = 4.0 * kde.bandwidth();
    let f = |x: f64| kde.density(x);
    let g = |x: f64| approx.density(x);
    Ok(overlap_score(&f, &g, lo - pad, hi + pad))
}
