//! Simulation harness: synthetic ordinal data, posterior-moment errors against
//! the Gibbs oracle, timing, and Wald-interval coverage.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ebayes::{estimate_thresholds, fit_method, EbOptions, FitterOptions, Method};
use crate::error::{Error, Result};
use crate::model::{GaussianPrior, OrdinalDataset, Thresholds};
use crate::numkern::{norm_quantile, RngStream};
use crate::oracle::{gibbs_fit, GibbsOptions};

const CUTOFF_ATTEMPTS: usize = 100;

/// Proportions of zero, `+1` and `-1` entries in the true coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPattern {
    pub zero: f64,
    pub plus: f64,
    pub minus: f64,
}

impl Default for BetaPattern {
    fn default() -> Self {
        Self { zero: 0.2, plus: 0.4, minus: 0.4 }
    }
}

impl BetaPattern {
    /// `[0; a] ++ [1; b] ++ [-1; p - a - b]` with `a`, `b` rounded from the proportions.
    pub fn beta(&self, p: usize) -> Array1<f64> {
        let zeros = ((self.zero * p as f64).round() as usize).min(p);
        let plus = ((self.plus * p as f64).round() as usize).min(p - zeros);
        Array1::from_iter((0..p).map(|j| if j < zeros { 0.0 } else if j < zeros + plus { 1.0 } else { -1.0 }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub categories: usize,
    pub replications: usize,
    pub seed: u64,
    pub pattern: BetaPattern,
    /// Diagonal entries of the zero-mean prior covariance.
    pub prior_variance: f64,
}

impl SimConfig {
    pub fn new(n: usize, p: usize, categories: usize) -> Self {
        Self { n, p, categories, replications: 1, seed: 0, pattern: BetaPattern::default(), prior_variance: 2.0 }
    }

    pub fn check(&self) -> Result<()> {
        if self.n < self.categories {
            return Err(Error::Config(format!("n = {} cannot fill {} categories", self.n, self.categories)));
        }
        if self.p == 0 {
            return Err(Error::Config("p must be positive".into()));
        }
        if self.categories < 2 {
            return Err(Error::Config("at least two categories are required".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        let BetaPattern { zero, plus, minus } = self.pattern;
        if [zero, plus, minus].iter().any(|v| !(*v >= 0.0)) || (zero + plus + minus - 1.0).abs() > 1e-9 {
            return Err(Error::Config("beta pattern proportions must be non-negative and sum to 1".into()));
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return Err(Error::Config("prior variance must be positive".into()));
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<GaussianPrior> {
        GaussianPrior::isotropic(self.p, 0.0, self.prior_variance)
    }
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub dataset: OrdinalDataset,
    pub beta: Array1<f64>,
    pub thresholds: Thresholds,
}

/// `X` from `U[0,1]` with columns rescaled to mean 0 and sd 0.5 (divisor `n - 1`),
/// `z ~ N(X beta, 1)`, and `K - 1` sorted cutoffs drawn uniformly on `[min z, max z]`.
/// Cutoffs that leave a category empty are redrawn.
pub fn gen_dataset(config: &SimConfig, rng: &mut RngStream) -> Result<SimDataset> {
    config.check()?;
    let (n, p, k) = (config.n, config.p, config.categories);
    let mut x = Array2::from_shape_fn((n, p), |_| rng.uniform());
    for mut col in x.columns_mut() {
        let mean = col.mean().expect("n >= 2");
        col.mapv_inplace(|v| v - mean);
        let sd = col.std(1.0);
        if !(sd > 0.0) {
            return Err(Error::Domain("constant simulated column".into()));
        }
        col.mapv_inplace(|v| 0.5 * v / sd);
    }
    let beta = config.pattern.beta(p);
    let z = x.dot(&beta) + Array1::from_shape_fn(n, |_| rng.standard_normal());
    let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    for _ in 0..CUTOFF_ATTEMPTS {
        let mut cut: Vec<f64> = (0..k - 1).map(|_| lo + (hi - lo) * rng.uniform()).collect();
        cut.sort_by(f64::total_cmp);
        let y: Vec<i64> = z.iter().map(|zi| 1 + cut.iter().filter(|&&c| c < *zi).count() as i64).collect();
        let mut counts = vec![0usize; k];
        for &yi in &y {
            counts[yi as usize - 1] += 1;
        }
        if counts.iter().all(|&c| c > 0) && cut.windows(2).all(|w| w[0] < w[1]) {
            let thresholds = Thresholds::new(cut)?;
            let dataset = OrdinalDataset::new(x, y, k)?;
            return Ok(SimDataset { dataset, beta, thresholds });
        }
    }
    Err(Error::DegenerateCutoffs(CUTOFF_ATTEMPTS))
}

/// `(mean |m - m_ref|, mean |s - s_ref|)` over coefficients.
pub fn moment_errors(mean: &Array1<f64>, sd: &Array1<f64>, ref_mean: &Array1<f64>, ref_sd: &Array1<f64>) -> (f64, f64) {
    let p = mean.len() as f64;
    let me = (mean - ref_mean).mapv(f64::abs).sum() / p;
    let se = (sd - ref_sd).mapv(f64::abs).sum() / p;
    (me, se)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub replication: usize,
    pub method: Method,
    pub mean_error: f64,
    pub sd_error: f64,
    /// Wall-clock seconds for the fit, including threshold estimation when the pipeline estimates them.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_error: f64,
    pub sd_error: f64,
    pub median_seconds: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

impl BenchResult {
    pub fn for_method(&self, method: Method) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn summary(&self) -> Vec<MethodSummary> {
        Method::ALL
            .iter()
            .filter_map(|&method| {
                let rows: Vec<&BenchRow> = self.for_method(method).collect();
                if rows.is_empty() {
                    return None;
                }
                let m = rows.len() as f64;
                Some(MethodSummary {
                    method,
                    mean_error: rows.iter().map(|r| r.mean_error).sum::<f64>() / m,
                    sd_error: rows.iter().map(|r| r.sd_error).sum::<f64>() / m,
                    median_seconds: median(rows.iter().map(|r| r.seconds).collect()),
                })
            })
            .collect()
    }

    /// `replication,method,mean_error,sd_error`; timings are left out so the file is reproducible.
    pub fn write_errors_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["replication", "method", "mean_error", "sd_error"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([r.replication.to_string(), r.method.to_string(), format!("{:?}", r.mean_error), format!("{:?}", r.sd_error)])
                .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn write_timing_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["replication", "method", "seconds"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([r.replication.to_string(), r.method.to_string(), format!("{:?}", r.seconds)]).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn io<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(e.to_string())
}

/// Fits each method at the given cutpoints, runs the Gibbs oracle at the same
/// cutpoints and reports the mean absolute differences of posterior means and sds.
pub fn error_vs_oracle(
    dataset: &OrdinalDataset,
    prior: &GaussianPrior,
    thresholds: &Thresholds,
    methods: &[Method],
    oracle: &GibbsOptions,
    fitters: &FitterOptions,
    rng: &mut RngStream,
) -> Result<BenchResult> {
    if methods.is_empty() {
        return Ok(BenchResult::default());
    }
    let samples = gibbs_fit(dataset, prior, thresholds, oracle, rng)?;
    let (ref_mean, ref_sd) = (samples.mean(), samples.sd());
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let start = Instant::now();
        let fit = fit_method(dataset, prior, thresholds, method, fitters)?;
        let g = fit.gaussian()?;
        let seconds = start.elapsed().as_secs_f64();
        let (mean_error, sd_error) = moment_errors(&g.mean, &g.sd(), &ref_mean, &ref_sd);
        rows.push(BenchRow { replication: 0, method, mean_error, sd_error, seconds });
    }
    Ok(BenchResult { rows })
}

/// Options shared by the replicated studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub oracle: GibbsOptions,
    pub fitters: FitterOptions,
    /// Method whose empirical-Bayes cutpoints are fixed for the oracle comparison.
    pub threshold_method: Method,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { oracle: GibbsOptions::default(), fitters: FitterOptions::default(), threshold_method: Method::Ep }
    }
}

fn replication_stream(config: &SimConfig, rep: usize) -> RngStream {
    RngStream::new(config.seed, 0).split(rep as u64)
}

/// The dataset simulated for replication `rep` of `config`.
pub fn replication_dataset(config: &SimConfig, rep: usize) -> Result<SimDataset> {
    gen_dataset(config, &mut replication_stream(config, rep).split(0))
}

/// One replication of the error study: simulate, estimate cutpoints with
/// `options.threshold_method`, then compare every method with the oracle at
/// those cutpoints. `seconds` is the time of each method's own
/// empirical-Bayes fit, which includes threshold estimation.
pub fn error_replication(config: &SimConfig, methods: &[Method], options: &StudyOptions, rep: usize) -> Result<Vec<BenchRow>> {
    let stream = replication_stream(config, rep);
    let sim = replication_dataset(config, rep)?;
    let prior = config.prior()?;
    let mut eb_options = EbOptions::new(options.threshold_method);
    eb_options.fitters = options.fitters;
    let thresholds = estimate_thresholds(&sim.dataset, &prior, &eb_options)?.thresholds;
    let mut result = error_vs_oracle(&sim.dataset, &prior, &thresholds, methods, &options.oracle, &options.fitters, &mut stream.split(1))?;
    for row in &mut result.rows {
        row.replication = rep;
        let mut own = EbOptions::new(row.method);
        own.fitters = options.fitters;
        let start = Instant::now();
        estimate_thresholds(&sim.dataset, &prior, &own)?;
        row.seconds = start.elapsed().as_secs_f64();
    }
    Ok(result.rows)
}

/// Replicated error study; replication `r` uses child stream `r` of `config.seed`,
/// so results do not depend on the thread count.
pub fn error_study(config: &SimConfig, methods: &[Method], options: &StudyOptions) -> Result<BenchResult> {
    config.check()?;
    let reps: Vec<Vec<BenchRow>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| error_replication(config, methods, options, rep))
        .collect::<Result<_>>()?;
    Ok(BenchResult { rows: reps.into_iter().flatten().collect() })
}

/// Empirical-Bayes fit times only, one row per replication and method.
pub fn timing_study(config: &SimConfig, methods: &[Method], fitters: &FitterOptions) -> Result<BenchResult> {
    config.check()?;
    let prior = config.prior()?;
    let mut rows = Vec::new();
    // Sequential so that timings are not distorted by sibling fits.
    for rep in 0..config.replications {
        let sim = replication_dataset(config, rep)?;
        for &method in methods {
            let mut eb = EbOptions::new(method);
            eb.fitters = *fitters;
            let start = Instant::now();
            estimate_thresholds(&sim.dataset, &prior, &eb)?;
            let seconds = start.elapsed().as_secs_f64();
            rows.push(BenchRow { replication: rep, method, mean_error: f64::NAN, sd_error: f64::NAN, seconds });
        }
    }
    Ok(BenchResult { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: Method,
    /// Nominal level in percent.
    pub level: f64,
    /// 1-based coefficient index.
    pub coefficient: usize,
    /// Percentage of replications whose interval contains the true coefficient.
    pub coverage: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub replications: usize,
    pub rows: Vec<CoverageRow>,
    /// Empirical-Bayes fit seconds per replication, keyed by method.
    #[serde(skip)]
    pub seconds: BTreeMap<String, Vec<f64>>,
}

impl CoverageTable {
    pub fn coverage(&self, method: Method, level: f64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == method && r.level == level).map(|r| r.coverage).collect()
    }

    pub fn mean_coverage(&self, method: Method, level: f64) -> f64 {
        let c = self.coverage(method, level);
        c.iter().sum::<f64>() / c.len() as f64
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "level", "coefficient", "coverage"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([r.method.to_string(), format!("{:?}", r.level), r.coefficient.to_string(), format!("{:?}", r.coverage)]).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Two-sided Wald multiplier; a nominal level of 100 gives an unbounded interval.
pub fn wald_multiplier(level: f64) -> Result<f64> {
    if !(level > 0.0 && level <= 100.0) {
        return Err(Error::Config(format!("coverage level must lie in (0, 100], got {level}")));
    }
    if level == 100.0 {
        return Ok(f64::INFINITY);
    }
    Ok(norm_quantile(0.5 + level / 200.0))
}

/// Replicated coverage of Wald intervals `mu_j +- z sd_j` from each method's
/// empirical-Bayes fit.
pub fn coverage_study(config: &SimConfig, levels: &[f64], methods: &[Method], fitters: &FitterOptions) -> Result<CoverageTable> {
    config.check()?;
    let multipliers: Vec<f64> = levels.iter().map(|&l| wald_multiplier(l)).collect::<Result<_>>()?;
    let prior = config.prior()?;
    let p = config.p;
    // hits[rep][method][level][j]
    type RepHits = (Vec<Vec<Vec<bool>>>, Vec<f64>);
    let per_rep: Vec<RepHits> = (0..config.replications)
        .into_par_iter()
        .map(|rep| -> Result<RepHits> {
            let sim = replication_dataset(config, rep)?;
            let mut hits = Vec::with_capacity(methods.len());
            let mut secs = Vec::with_capacity(methods.len());
            for &method in methods {
                let mut eb = EbOptions::new(method);
                eb.fitters = *fitters;
                let start = Instant::now();
                let fit = estimate_thresholds(&sim.dataset, &prior, &eb)?;
                secs.push(start.elapsed().as_secs_f64());
                let g = fit.fit.gaussian()?;
                let sd = g.sd();
                if sd.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::Domain(format!("{method}: non-positive posterior sd")));
                }
                hits.push(
                    multipliers
                        .iter()
                        .map(|&z| (0..p).map(|j| (g.mean[j] - sim.beta[j]).abs() <= z * sd[j]).collect())
                        .collect(),
                );
            }
            Ok((hits, secs))
        })
        .collect::<Result<_>>()?;
    let reps = config.replications as f64;
    let mut rows = Vec::new();
    let mut seconds = BTreeMap::new();
    for (mi, &method) in methods.iter().enumerate() {
        for (li, &level) in levels.iter().enumerate() {
            for j in 0..p {
                let count = per_rep.iter().filter(|(h, _)| h[mi][li][j]).count();
                rows.push(CoverageRow { method, level, coefficient: j + 1, coverage: 100.0 * count as f64 / reps });
            }
        }
        seconds.insert(method.to_string(), per_rep.iter().map(|(_, s)| s[mi]).collect());
    }
    Ok(CoverageTable { replications: config.replications, rows, seconds })
}

/// Column means and sds (divisor `n - 1`) of a design matrix.
pub fn column_moments(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    (x.mean_axis(Axis(0)).expect("non-empty"), x.std_axis(Axis(0), 1.0))
}
