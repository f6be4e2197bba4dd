//! On-disk JSON format for fitted models.

use std::path::Path;

use cumprobit::ebayes::{EbFit, Method, MethodFit};
use cumprobit::{Error, FitReport, GaussianPosterior, GaussianPrior, PmfPosterior, Result, Thresholds};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub converged: bool,
    pub iterations: usize,
    pub final_objective: f64,
    pub trace: Vec<f64>,
    pub skipped_updates: usize,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub elapsed_seconds: Option<f64>,
}

impl ReportRecord {
    fn from_report(r: &FitReport, timed: bool) -> Self {
        Self {
            converged: r.converged,
            iterations: r.iterations,
            final_objective: r.final_objective,
            trace: r.trace.clone(),
            skipped_updates: r.skipped_updates,
            notes: r.notes.clone(),
            elapsed_seconds: timed.then_some(r.elapsed_seconds),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub schema_version: u32,
    pub method: Method,
    /// True when the fitter and, if estimated, the threshold search both converged.
    pub converged: bool,
    pub categories: usize,
    pub columns: Vec<String>,
    pub prior: GaussianPrior,
    pub thresholds: Thresholds,
    pub thresholds_estimated: bool,
    /// Gaussian summary of `q(beta)`; for PMF these are its closed-form moments.
    pub posterior: GaussianPosterior,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pmf: Option<PmfPosterior>,
    pub fit_report: ReportRecord,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold_report: Option<ReportRecord>,
}

impl FitRecord {
    pub fn new(
        fit: &MethodFit,
        prior: &GaussianPrior,
        thresholds: &Thresholds,
        columns: &[String],
        eb: Option<&EbFit>,
        timed: bool,
    ) -> Result<Self> {
        let fit_report = ReportRecord::from_report(fit.report(), timed);
        let threshold_report = eb.map(|e| ReportRecord::from_report(&e.report, timed));
        let converged = fit_report.converged && threshold_report.as_ref().map_or(true, |r| r.converged);
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            method: fit.method(),
            converged,
            categories: thresholds.categories(),
            columns: columns.to_vec(),
            prior: prior.clone(),
            thresholds: thresholds.clone(),
            thresholds_estimated: eb.is_some(),
            posterior: fit.gaussian()?,
            pmf: match fit {
                MethodFit::Pmf(f) => Some(f.posterior.clone()),
                _ => None,
            },
            fit_report,
            threshold_report,
        })
    }
}

/// A single record for one method, an array for several.
pub fn save(path: &Path, records: &[FitRecord]) -> Result<()> {
    let text = if records.len() == 1 {
        serde_json::to_string_pretty(&records[0])
    } else {
        serde_json::to_string_pretty(records)
    }
    .map_err(|e| Error::Config(format!("cannot serialize fit: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Vec<FitRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: invalid JSON: {e}", path.display())))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    items
        .into_iter()
        .map(|item| {
            let version = item.get("schema_version").and_then(|v| v.as_u64());
            if version != Some(SCHEMA_VERSION as u64) {
                return Err(Error::Config(format!("{}: unsupported schema_version {version:?}, expected {SCHEMA_VERSION}", path.display())));
            }
            serde_json::from_value(item).map_err(|e| Error::Config(format!("{}: malformed fit record: {e}", path.display())))
        })
        .collect()
}
