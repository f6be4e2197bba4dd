use std::fs::File;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cumprobit::ebayes::{estimate_thresholds, fit_method, EbOptions, FitterOptions, Method};
use cumprobit::model::{read_dataset_csv, read_design_csv, write_dataset_csv};
use cumprobit::oracle::{accuracy_score, gibbs_fit, ApproxMarginal, GibbsOptions};
use cumprobit::predict::{classify, predict_gaussian, predict_pmf, PredictiveDistribution};
use cumprobit::simbench::{coverage_study, error_replication, moment_errors, replication_dataset, BenchResult, BetaPattern, SimConfig, StudyOptions};
use cumprobit::{EpOptions, Error, GaussianPrior, MfvbOptions, OrdinalDataset, PmfOptions, Result, RngStream, SpdMatrix, Thresholds};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::fitfile::{self, FitRecord};
use crate::{BenchmarkArgs, CompareArgs, FitArgs, MethodArg, PredictArgs, PriorArgs, SimArgs, SimulateArgs, ToleranceArgs};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Every number in a headerless CSV, row by row.
fn read_numbers(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(file);
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| if e.is_io_error() { Error::Io(e.to_string()) } else { Error::Config(e.to_string()) })?;
        let row = record
            .iter()
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<f64>().map_err(|_| Error::Config(format!("{}: not a number: `{f}`", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        if !row.is_empty() {
            rows.push(row);
        }
    }
    Ok(rows)
}

fn read_thresholds(path: &Path) -> Result<Thresholds> {
    Thresholds::new(read_numbers(path)?.into_iter().flatten().collect())
}

fn build_prior(args: &PriorArgs, p: usize) -> Result<GaussianPrior> {
    let mean = Array1::from_elem(p, args.prior_mean);
    match &args.prior_cov {
        Some(path) => {
            let rows = read_numbers(path)?;
            if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                return Err(Error::DimensionMismatch(format!("prior covariance must be {p} x {p}")));
            }
            let cov = Array2::from_shape_vec((p, p), rows.into_iter().flatten().collect()).expect("checked shape");
            GaussianPrior::new(mean, SpdMatrix::new(cov)?)
        }
        None => {
            let mut prior = GaussianPrior::isotropic(p, 0.0, args.prior_var)?;
            if args.prior_mean != 0.0 {
                prior = GaussianPrior::new(mean, prior.covariance().clone())?;
            }
            Ok(prior)
        }
    }
}

fn fitter_options(t: &ToleranceArgs) -> FitterOptions {
    FitterOptions {
        mfvb: MfvbOptions { epsilon: t.epsilon, max_iterations: t.max_iter },
        pmf: PmfOptions { epsilon: t.epsilon, max_iterations: t.max_iter, compute_moments: true },
        ep: EpOptions { epsilon: t.epsilon, max_sweeps: t.max_iter, damping: t.damping, ..EpOptions::default() },
    }
}

fn eb_options(method: Method, t: &ToleranceArgs) -> EbOptions {
    let mut eb = EbOptions::new(method);
    eb.max_outer_iterations = t.max_outer;
    eb.fitters = fitter_options(t);
    eb
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let dataset = read_dataset_csv(&args.data, args.categories)?;
    let prior = build_prior(&args.prior, dataset.p())?;
    let fixed = args.thresholds.as_deref().map(read_thresholds).transpose()?;
    let mut records = Vec::new();
    for method in args.method.methods() {
        let record = match &fixed {
            Some(t) => {
                let fit = fit_method(&dataset, &prior, t, method, &fitter_options(&args.tolerances))?;
                FitRecord::new(&fit, &prior, t, dataset.columns(), None, args.record_time)?
            }
            None => {
                let eb = estimate_thresholds(&dataset, &prior, &eb_options(method, &args.tolerances))?;
                FitRecord::new(&eb.fit, &prior, &eb.thresholds, dataset.columns(), Some(&eb), args.record_time)?
            }
        };
        let outer = record.threshold_report.as_ref().map_or(String::new(), |r| format!(" outer_iterations={}", r.iterations));
        eprintln!(
            "{method}: converged={}{outer} fit_iterations={} thresholds={:?}",
            record.converged,
            record.fit_report.iterations,
            record.thresholds.as_slice()
        );
        records.push(record);
    }
    fitfile::save(&args.out, &records)
}

fn select_record(records: Vec<FitRecord>, method: Option<MethodArg>) -> Result<FitRecord> {
    match method {
        Some(MethodArg::All) => Err(Error::Config("predict needs a single method".into())),
        Some(m) => {
            let want = m.methods()[0];
            records
                .into_iter()
                .find(|r| r.method == want)
                .ok_or_else(|| Error::Config(format!("fit file has no `{want}` record")))
        }
        None if records.len() == 1 => Ok(records.into_iter().next().expect("one record")),
        None => Err(Error::Config("fit file holds several methods; choose one with --method".into())),
    }
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let record = select_record(fitfile::load(&args.fit)?, args.method)?;
    let table = read_design_csv(&args.data)?;
    if table.columns != record.columns {
        return Err(Error::DimensionMismatch(format!(
            "data columns {:?} do not match the fitted columns {:?}",
            table.columns, record.columns
        )));
    }
    let dists: Vec<PredictiveDistribution> = match &record.pmf {
        Some(post) => predict_pmf(post, &record.thresholds, table.x.view(), args.draws, &mut RngStream::new(args.seed, 0))?,
        None => predict_gaussian(&record.posterior, &record.thresholds, table.x.view())?,
    };
    let k = record.categories;
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    let mut header: Vec<String> = (1..=k).map(|j| format!("p_{j}")).collect();
    header.extend((1..k).map(|j| format!("cum_{j}")));
    header.push("class".into());
    w.write_record(&header).map_err(csv_err)?;
    for d in &dists {
        let mut row: Vec<String> = d.probs.iter().chain(&d.cumulative).map(|v| v.to_string()).collect();
        row.push(classify(d).to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

fn sim_config(a: &SimArgs) -> Result<SimConfig> {
    let &[zero, plus, minus] = a.pattern.as_slice() else {
        return Err(Error::Config(format!("--pattern needs three proportions, got {}", a.pattern.len())));
    };
    let mut cfg = SimConfig::new(a.n, a.p, a.categories);
    cfg.seed = a.seed;
    cfg.pattern = BetaPattern { zero, plus, minus };
    Ok(cfg)
}

#[derive(Serialize)]
struct Truth<'a> {
    seed: u64,
    n: usize,
    p: usize,
    categories: usize,
    beta: Vec<f64>,
    thresholds: &'a [f64],
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::Io(e.to_string()))
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = sim_config(&args.sim)?;
    let sim = replication_dataset(&cfg, 0)?;
    write_dataset_csv(&args.out, &sim.dataset)?;
    if let Some(path) = &args.truth {
        let truth = Truth {
            seed: cfg.seed,
            n: cfg.n,
            p: cfg.p,
            categories: cfg.categories,
            beta: sim.beta.to_vec(),
            thresholds: sim.thresholds.as_slice(),
        };
        write_json(path, &truth)?;
    }
    Ok(())
}

fn resolve_thresholds(path: Option<&Path>, dataset: &OrdinalDataset, prior: &GaussianPrior, t: &ToleranceArgs) -> Result<Thresholds> {
    match path {
        Some(p) => read_thresholds(p),
        None => Ok(estimate_thresholds(dataset, prior, &eb_options(Method::Ep, t))?.thresholds),
    }
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let dataset = read_dataset_csv(&args.data, args.categories)?;
    let prior = build_prior(&args.prior, dataset.p())?;
    let thresholds = resolve_thresholds(args.thresholds.as_deref(), &dataset, &prior, &args.tolerances)?;
    let oracle = GibbsOptions { iterations: args.oracle.oracle_iterations, burn_in: args.oracle.burn_in };
    let samples = gibbs_fit(&dataset, &prior, &thresholds, &oracle, &mut RngStream::new(args.seed, 0))?;
    if let Some(path) = &args.samples {
        samples.save_csv(path)?;
    }
    let (ref_mean, ref_sd) = (samples.mean(), samples.sd());
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    w.write_record(["method", "coefficient", "column", "mean", "sd", "oracle_mean", "oracle_sd", "accuracy"]).map_err(csv_err)?;
    println!("{:<6} {:>12} {:>12} {:>10}", "method", "mean_error", "sd_error", "accuracy");
    for method in args.method.methods() {
        let g = fit_method(&dataset, &prior, &thresholds, method, &fitter_options(&args.tolerances))?.gaussian()?;
        let sd = g.sd();
        let mut total_acc = 0.0;
        for j in 0..dataset.p() {
            let acc = accuracy_score(&samples, &ApproxMarginal::Gaussian { mean: g.mean[j], sd: sd[j] }, j)?;
            total_acc += acc;
            w.write_record([
                method.to_string(),
                (j + 1).to_string(),
                dataset.columns()[j].clone(),
                g.mean[j].to_string(),
                sd[j].to_string(),
                ref_mean[j].to_string(),
                ref_sd[j].to_string(),
                acc.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let (me, se) = moment_errors(&g.mean, &sd, &ref_mean, &ref_sd);
        println!("{:<6} {:>12.3e} {:>12.3e} {:>10.2}", method.name(), me, se, total_acc / dataset.p() as f64);
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

#[derive(Serialize)]
struct MetricRow {
    replication: usize,
    method: Method,
    metric: &'static str,
    value: f64,
}

#[derive(Serialize)]
struct CoverageJsonRow {
    method: Method,
    level: f64,
    coefficient: usize,
    coverage: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        m if m % 2 == 1 => v[m / 2],
        m => 0.5 * (v[m / 2 - 1] + v[m / 2]),
    }
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    let mut cfg = sim_config(&args.sim)?;
    cfg.replications = args.reps;
    cfg.prior_variance = args.prior_var;
    cfg.check()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| if args.coverage { run_coverage(args, &cfg) } else { run_errors(args, &cfg) })
}

fn run_coverage(args: &BenchmarkArgs, cfg: &SimConfig) -> Result<()> {
    let methods = args.method.methods();
    let table = coverage_study(cfg, &args.levels, &methods, &fitter_options(&args.tolerances))?;
    table.write_csv(create(&args.out)?)?;
    if let Some(path) = &args.json {
        let rows: Vec<CoverageJsonRow> = table
            .rows
            .iter()
            .map(|r| CoverageJsonRow { method: r.method, level: r.level, coefficient: r.coefficient, coverage: r.coverage })
            .collect();
        write_json(path, &rows)?;
    }
    if let Some(path) = &args.timing_out {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["replication", "method", "seconds"]).map_err(csv_err)?;
        for m in &methods {
            for (rep, s) in table.seconds[m.name()].iter().enumerate() {
                w.write_record([rep.to_string(), m.to_string(), s.to_string()]).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
    }
    print!("{:<6}", "method");
    for l in &args.levels {
        print!(" {:>8}", format!("{l}%"));
    }
    println!(" {:>10}", "median_s");
    for m in &methods {
        print!("{:<6}", m.name());
        for &l in &args.levels {
            print!(" {:>8.1}", table.mean_coverage(*m, l));
        }
        println!(" {:>10.3}", median(table.seconds[m.name()].clone()));
    }
    Ok(())
}

fn run_errors(args: &BenchmarkArgs, cfg: &SimConfig) -> Result<()> {
    let methods = args.method.methods();
    let options = StudyOptions {
        oracle: GibbsOptions { iterations: args.oracle.oracle_iterations, burn_in: args.oracle.burn_in },
        fitters: fitter_options(&args.tolerances),
        threshold_method: Method::Ep,
    };
    let outcomes: Vec<Result<Vec<_>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            catch_unwind(AssertUnwindSafe(|| error_replication(cfg, &methods, &options, rep)))
                .unwrap_or_else(|_| Err(Error::Domain(format!("replication {rep} panicked"))))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => rows.extend(r),
            Err(e) => failures.push(format!("replication {rep}: {e}")),
        }
    }
    for f in &failures {
        eprintln!("{f}");
    }
    if failures.len() > args.failure_budget {
        return Err(Error::Domain(format!("{} replications failed (budget {})", failures.len(), args.failure_budget)));
    }
    let result = BenchResult { rows };
    result.write_errors_csv(create(&args.out)?)?;
    if let Some(path) = &args.json {
        let rows: Vec<MetricRow> = result
            .rows
            .iter()
            .flat_map(|r| {
                [
                    MetricRow { replication: r.replication, method: r.method, metric: "mean_error", value: r.mean_error },
                    MetricRow { replication: r.replication, method: r.method, metric: "sd_error", value: r.sd_error },
                ]
            })
            .collect();
        write_json(path, &rows)?;
    }
    if let Some(path) = &args.timing_out {
        result.write_timing_csv(create(path)?)?;
    }
    println!("{:<6} {:>12} {:>12} {:>10}", "method", "mean_error", "sd_error", "median_s");
    for s in result.summary() {
        println!("{:<6} {:>12.3e} {:>12.3e} {:>10.3}", s.method.name(), s.mean_error, s.sd_error, s.median_seconds);
    }
    Ok(())
}
