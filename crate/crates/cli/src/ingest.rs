//! CSV ingestion into a [`Dataset`].
//!
//! Cells equal to the NA token are missing. Covariate columns with
//! non-numeric levels (or listed as categorical) are dummy-coded with the
//! first level in sorted order as the reference.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use memiss_core::{Covariates, Dataset, Measurements, Response};
use thiserror::Error;

use crate::config::{ColumnBindings, ResponseBinding};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("non-numeric value `{value}` in column `{column}`, row {row}")]
    NonNumeric { column: String, row: usize, value: String },
    #[error("event indicator `{value}` in row {row} is not 0/1")]
    BadEvent { row: usize, value: String },
    #[error("file has no data rows")]
    Empty,
    #[error("cannot read data: {0}")]
    Io(String),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Raw table with string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        if headers.is_empty() || rows.is_empty() {
            return Err(IngestError::Empty);
        }
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Result<Vec<&str>, IngestError> {
        let k = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::UnknownColumn(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r.get(k).map_or("", String::as_str)).collect())
    }

    fn numeric(&self, name: &str, na: &str) -> Result<Vec<Option<f64>>, IngestError> {
        self.column(name)?
            .into_iter()
            .enumerate()
            .map(|(row, cell)| parse_cell(cell, na).map_err(|_| non_numeric(name, row, cell)))
            .collect()
    }
}

fn non_numeric(column: &str, row: usize, value: &str) -> IngestError {
    IngestError::NonNumeric { column: column.to_string(), row: row + 1, value: value.to_string() }
}

fn parse_cell(cell: &str, na: &str) -> Result<Option<f64>, std::num::ParseFloatError> {
    if cell == na {
        Ok(None)
    } else {
        cell.parse().map(Some)
    }
}

fn sanitize(s: &str) -> String {
    let mapped: String = s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    mapped.trim_matches('_').to_string()
}

/// Numeric columns pass through; categorical ones become dummy columns.
fn covariates(table: &Table, names: &[String], categorical: &[String], na: &str) -> Result<Covariates, IngestError> {
    let n = table.rows.len();
    let mut out_names = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
    for name in names {
        let cells = table.column(name)?;
        let numeric: Option<Vec<Option<f64>>> = cells.iter().map(|c| parse_cell(c, na).ok()).collect();
        match numeric {
            Some(values) if !categorical.contains(name) => {
                out_names.push(name.clone());
                columns.push(values);
            }
            _ => {
                let levels: BTreeSet<&str> = cells.iter().copied().filter(|c| *c != na).collect();
                for level in levels.iter().skip(1) {
                    out_names.push(format!("{}_{}", sanitize(name), sanitize(level)));
                    columns.push(
                        cells.iter().map(|c| (*c != na).then(|| if c == level { 1.0 } else { 0.0 })).collect(),
                    );
                }
            }
        }
    }
    let rows = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    Ok(Covariates::new(out_names, rows))
}

fn event_column(table: &Table, name: &str, na: &str) -> Result<Vec<Option<bool>>, IngestError> {
    table
        .column(name)?
        .into_iter()
        .enumerate()
        .map(|(row, cell)| match cell {
            c if c == na => Ok(None),
            "1" | "true" | "TRUE" => Ok(Some(true)),
            "0" | "false" | "FALSE" => Ok(Some(false)),
            other => Err(IngestError::BadEvent { row: row + 1, value: other.to_string() }),
        })
        .collect()
}

/// Builds a [`Dataset`] from a parsed table, optionally restricted to
/// complete cases.
pub fn ingest_table(table: &Table, na_token: &str, bindings: &ColumnBindings, response: &ResponseBinding) -> Result<Dataset, IngestError> {
    let response = match response {
        ResponseBinding::Gaussian(col) => Response::Gaussian { name: col.clone(), y: table.numeric(col, na_token)? },
        ResponseBinding::Survival { time, event } => {
            let t = table.numeric(time, na_token)?;
            let e = event_column(table, event, na_token)?;
            let time = t.iter().zip(&e).map(|(t, e)| e.and(*t)).collect();
            Response::Survival { time, event: e.into_iter().map(|e| e.unwrap_or(false)).collect() }
        }
    };
    let cols = bindings.w.iter().map(|c| table.numeric(c, na_token)).collect::<Result<Vec<_>, _>>()?;
    let reps = (0..table.rows.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    let w_name = bindings.w.first().cloned().unwrap_or_default();
    let data = Dataset {
        response,
        w: Measurements { name: w_name, reps },
        z: covariates(table, &bindings.z, &bindings.categorical, na_token)?,
        z_tilde: covariates(table, &bindings.z_tilde, &bindings.categorical, na_token)?,
    };
    Ok(if bindings.complete_case { data.complete_case() } else { data })
}

/// Reads a CSV file with a header row into a [`Dataset`].
pub fn ingest_csv(path: &Path, na_token: &str, bindings: &ColumnBindings, response: &ResponseBinding) -> Result<Dataset, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    ingest_table(&Table::from_reader(file)?, na_token, bindings, response)
}
