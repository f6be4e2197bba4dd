//! CSV ingestion: a header row, one integer column `y`, all other columns numeric.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::OrdinalDataset;
use crate::error::{Error, Result};

/// A numeric design table, optionally carrying a response column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignTable {
    pub columns: Vec<String>,
    pub x: Array2<f64>,
    pub y: Option<Vec<i64>>,
}

fn parse_table<R: Read>(reader: R, require_y: bool) -> Result<DesignTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let y_col = headers.iter().position(|h| h == "y");
    if require_y && y_col.is_none() {
        return Err(Error::Config("missing required column `y`".into()));
    }
    let columns: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != y_col)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_error)?;
        if record.len() != headers.len() {
            return Err(Error::Config(format!("row {}: expected {} fields, found {}", r + 1, headers.len(), record.len())));
        }
        for (j, field) in record.iter().enumerate() {
            let name = &headers[j];
            if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan") {
                return Err(Error::NonFiniteInput(format!("missing value in row {}, column `{name}`", r + 1)));
            }
            if Some(j) == y_col {
                let v: i64 = field
                    .parse()
                    .map_err(|_| Error::Config(format!("row {}: `y` must be an integer, found `{field}`", r + 1)))?;
                y.push(v);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Config(format!("row {}, column `{name}`: not a number: `{field}`", r + 1)))?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteInput(format!("row {}, column `{name}`", r + 1)));
                }
                values.push(v);
            }
        }
        rows += 1;
    }
    let x = Array2::from_shape_vec((rows, columns.len()), values).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Ok(DesignTable { columns, x, y: y_col.map(|_| y) })
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        Error::Io(e.to_string())
    } else {
        Error::Config(format!("malformed CSV: {e}"))
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Reads a labelled dataset. `categories` defaults to the largest observed response.
pub fn read_dataset_csv(path: &Path, categories: Option<usize>) -> Result<OrdinalDataset> {
    dataset_from_reader(open(path)?, categories)
}

pub(crate) fn dataset_from_reader<R: Read>(reader: R, categories: Option<usize>) -> Result<OrdinalDataset> {
    let table = parse_table(reader, true)?;
    let y = table.y.expect("y column checked");
    let k = match categories {
        Some(k) => k,
        None => y.iter().copied().max().unwrap_or(0).max(0) as usize,
    };
    OrdinalDataset::with_columns(table.x, y, k, table.columns)
}

/// Reads covariates only; a `y` column, if present, is returned separately.
pub fn read_design_csv(path: &Path) -> Result<DesignTable> {
    parse_table(open(path)?, false)
}

pub fn write_dataset_csv(path: &Path, dataset: &OrdinalDataset) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_dataset(file, dataset)
}

pub(crate) fn write_dataset<W: Write>(writer: W, dataset: &OrdinalDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string()];
    header.extend(dataset.columns().iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..dataset.n() {
        let mut rec = vec![dataset.y()[i].to_string()];
        rec.extend(dataset.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}
