//! CSV ingestion and output, and the presample estimate of `D_0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cli::config::Ridge;
use crate::error::{Error, Result};
use crate::filter::ReturnsSeries;
use crate::matops::{SymMatrix, SymPd};

fn is_iso8601(s: &str) -> bool {
    use chrono::{DateTime, NaiveDate, NaiveDateTime};
    NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f").is_ok()
        || DateTime::parse_from_rfc3339(s).is_ok()
}

/// Reads a returns file: a header row, an ISO-8601 timestamp column, then `q`
/// numeric columns. `q = None` takes the width from the header.
pub fn load_returns_csv(path: &Path, q: Option<usize>) -> Result<ReturnsSeries> {
    let file = std::fs::File::open(path)?;
    read_returns(file, q)
}

pub fn read_returns(reader: impl std::io::Read, q: Option<usize>) -> Result<ReturnsSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(Error::Parse { row: 1, column: width, message: "need a timestamp column and at least one return column".into() });
    }
    let cols = width - 1;
    if let Some(q) = q {
        if q != cols {
            return Err(Error::DimensionMismatch { expected: q, found: cols });
        }
    }
    let mut timestamps = Vec::new();
    let mut returns = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(timestamps.len() + 2);
        let ts = &rec[0];
        if !is_iso8601(ts) {
            return Err(Error::Parse { row, column: 1, message: format!("'{ts}' is not an ISO-8601 timestamp") });
        }
        let mut r = Vec::with_capacity(cols);
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse { row, column: c + 1, message: format!("'{cell}' is not a finite number") })?;
            r.push(v);
        }
        timestamps.push(ts.to_string());
        returns.push(r);
    }
    ReturnsSeries::new(cols, returns, Some(timestamps))
}

/// Writes a returns file in the format [`load_returns_csv`] reads.
pub fn write_returns_csv(path: &Path, series: &ReturnsSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend((1..=series.dim()).map(|i| format!("r{i}")));
    w.write_record(&header)?;
    for t in 0..series.len() {
        let ts = series.timestamps().map(|ts| ts[t].clone()).unwrap_or_else(|| t.to_string());
        let mut row = vec![ts];
        row.extend(series.get(t).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `D_0` estimate with the ridge actually used and an optional warning.
#[derive(Debug, Clone)]
pub struct PresampleD0 {
    pub d0: SymPd,
    pub ridge_used: f64,
    pub warning: Option<String>,
}

/// `(1/T_0) Σ r_t r_t' + ρ (tr/q) I`. With [`Ridge::Auto`] the ridge is 0
/// unless the raw average is not PD, in which case `ρ = 1e-8` and a warning
/// is returned.
pub fn d0_from_presample(presample: &ReturnsSeries, ridge: Ridge) -> Result<PresampleD0> {
    if presample.is_empty() {
        return Err(Error::invalid("presample must hold at least one return"));
    }
    let q = presample.dim();
    let mut acc = SymMatrix::zeros(q);
    for r in presample.returns() {
        acc = acc.scale_add(1.0, &SymMatrix::outer(r))?;
    }
    let avg = acc.scaled(1.0 / presample.len() as f64);
    let mean_diag = (0..q).map(|i| avg.get(i, i)).sum::<f64>() / q as f64;
    let with_ridge = |rho: f64| -> Result<SymPd> {
        SymPd::from_sym(avg.scale_add(1.0, &SymMatrix::identity(q).scaled(rho * mean_diag))?)
    };
    match ridge {
        Ridge::Fixed(rho) => {
            if !(rho >= 0.0) {
                return Err(Error::invalid(format!("ridge must be nonnegative, got {rho}")));
            }
            Ok(PresampleD0 { d0: with_ridge(rho)?, ridge_used: rho, warning: None })
        }
        Ridge::Auto(_) => match SymPd::from_sym(avg.clone()) {
            Ok(d0) => Ok(PresampleD0 { d0, ridge_used: 0.0, warning: None }),
            Err(_) => {
                let rho = 1e-8;
                let d0 = with_ridge(rho)?;
                Ok(PresampleD0 {
                    d0,
                    ridge_used: rho,
                    warning: Some(format!(
                        "presample average of {} returns is not positive definite; added ridge {rho:e} x mean diagonal",
                        presample.len()
                    )),
                })
            }
        },
    }
}

/// Subtracts the column means of `presample` from every row of `series`.
pub fn demean(series: &ReturnsSeries, presample: &ReturnsSeries) -> Result<ReturnsSeries> {
    let q = series.dim();
    let n = presample.len() as f64;
    let mu: Vec<f64> = (0..q).map(|i| presample.returns().iter().map(|r| r[i]).sum::<f64>() / n).collect();
    let rows = series.returns().iter().map(|r| r.iter().zip(&mu).map(|(a, m)| a - m).collect()).collect();
    ReturnsSeries::new(q, rows, series.timestamps().map(|t| t.to_vec()))
}

/// A named table with a string key column (time or label) and numeric columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub key: String,
    pub columns: Vec<String>,
    pub keys: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(key: &str, columns: Vec<String>) -> Self {
        Table { key: key.into(), columns, keys: Vec::new(), rows: Vec::new() }
    }

    pub fn push(&mut self, key: impl Into<String>, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.keys.push(key.into());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![self.key.clone()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (k, r) in self.keys.iter().zip(&self.rows) {
            let mut rec = vec![k.clone()];
            rec.extend(r.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
