//! CSV and JSON file formats.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::denoise::DenoiseResult;
use crate::error::{NpmleError, Result};
use crate::mixture::{Dataset, MixingMeasure};
use crate::solver::FitResult;

fn io_err(path: &Path, source: std::io::Error) -> NpmleError {
    NpmleError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// A numeric table with an optional header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub columns: usize,
    /// Row-major cells.
    pub cells: Vec<f64>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.cells.len().checked_div(self.columns).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.cells[i * self.columns..(i + 1) * self.columns]
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses comma-separated numbers. The first line is a header when any of
/// its cells is not a number. Blank lines are skipped; rows and columns in
/// error messages are 1-based.
pub fn parse_csv(text: &str) -> Result<Table> {
    let mut header = None;
    let mut columns = 0;
    let mut cells = Vec::new();
    let mut first = true;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if first {
            first = false;
            columns = fields.len();
            if fields.iter().any(|f| parse_cell(f).is_none()) {
                header = Some(fields.iter().map(|f| f.trim().to_string()).collect());
                continue;
            }
        }
        if fields.len() != columns {
            return Err(NpmleError::Data(format!(
                "row {}: expected {columns} columns, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        for (col, f) in fields.iter().enumerate() {
            let v = parse_cell(f).ok_or_else(|| {
                NpmleError::Data(format!(
                    "row {}, column {}: cannot parse {:?} as a finite number",
                    lineno + 1,
                    col + 1,
                    f.trim()
                ))
            })?;
            cells.push(v);
        }
    }
    if cells.is_empty() {
        return Err(NpmleError::Data("no data rows".into()));
    }
    Ok(Table { header, columns, cells })
}

pub fn read_table(path: &Path) -> Result<Table> {
    parse_csv(&read_text(path)?)
}

/// Reads a point cloud: one row per observation, one column per coordinate.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let t = read_table(path)?;
    Dataset::new(t.columns, t.cells)
}

/// Formats a value with 17 significant digits, enough to round-trip exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_csv(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn dataset_to_csv(data: &Dataset) -> String {
    let header: Vec<String> = (1..=data.dim()).map(|k| format!("x_{k}")).collect();
    format_csv(&header, data.iter().map(<[f64]>::to_vec))
}

/// Means and optional row-major covariances of each observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub means: Dataset,
    pub covariances: Option<Vec<DMatrix<f64>>>,
}

/// Latent file with `d` columns (means) or `d + d²` columns (means followed
/// by the row-major covariance).
pub fn read_latents(path: &Path, dim: usize) -> Result<Latents> {
    let t = read_table(path)?;
    let d = dim;
    if t.columns == d {
        return Ok(Latents {
            means: Dataset::new(d, t.cells)?,
            covariances: None,
        });
    }
    if t.columns != d + d * d {
        return Err(NpmleError::Data(format!(
            "latent file has {} columns; expected {d} (means) or {} (means and covariance)",
            t.columns,
            d + d * d
        )));
    }
    let mut means = Vec::with_capacity(t.rows() * d);
    let mut covs = Vec::with_capacity(t.rows());
    for i in 0..t.rows() {
        let row = t.row(i);
        means.extend_from_slice(&row[..d]);
        covs.push(DMatrix::from_row_slice(d, d, &row[d..]));
    }
    Ok(Latents {
        means: Dataset::new(d, means)?,
        covariances: Some(covs),
    })
}

/// The saved form of a fitted mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dim: usize,
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub duality_gap: f64,
    pub iterations: usize,
    pub loglik: f64,
}

impl ModelFile {
    pub fn from_fit(fit: &FitResult) -> Self {
        ModelFile {
            dim: fit.mixture.dim(),
            atoms: fit.mixture.atom_iter().map(<[f64]>::to_vec).collect(),
            weights: fit.mixture.weights().to_vec(),
            duality_gap: fit.duality_gap,
            iterations: fit.iterations,
            loglik: fit.log_likelihood(),
        }
    }

    pub fn mixture(&self) -> Result<MixingMeasure> {
        let bad = |m: String| NpmleError::Data(format!("model file: {m}"));
        if self.atoms.len() != self.weights.len() {
            return Err(bad(format!("{} atoms but {} weights", self.atoms.len(), self.weights.len())));
        }
        if let Some(a) = self.atoms.iter().find(|a| a.len() != self.dim) {
            return Err(bad(format!("atom of length {} in a model of dimension {}", a.len(), self.dim)));
        }
        let atoms = Dataset::from_rows(&self.atoms).map_err(|e| bad(e.to_string()))?;
        MixingMeasure::new(atoms, self.weights.clone()).map_err(|e| bad(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| NpmleError::Data(format!("model file: {e}")))
    }
}

/// Columns `x_*`, `thetahat_*` and, when present, `oracle_*`.
pub fn denoise_to_csv(data: &Dataset, result: &DenoiseResult) -> String {
    let d = data.dim();
    let mut header: Vec<String> = (1..=d).map(|k| format!("x_{k}")).collect();
    header.extend((1..=d).map(|k| format!("thetahat_{k}")));
    if result.oracle.is_some() {
        header.extend((1..=d).map(|k| format!("oracle_{k}")));
    }
    let rows = (0..data.len()).map(|i| {
        let mut row = data.point(i).to_vec();
        row.extend_from_slice(result.estimates.point(i));
        if let Some(o) = &result.oracle {
            row.extend_from_slice(o.point(i));
        }
        row
    });
    format_csv(&header, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskSummary {
    pub n: usize,
    pub dim: usize,
    pub rho_used: f64,
    pub risk_vs_truth: Option<f64>,
    pub risk_vs_oracle: Option<f64>,
}

impl RiskSummary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}
