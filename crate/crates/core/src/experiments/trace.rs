//! Time-indexed run metrics and their CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact column order of a trace file.
pub const TRACE_HEADER: [&str; 7] = [
    "t",
    "avg_bellman_error",
    "n_error",
    "d_error",
    "dist_ratio",
    "grad_diff",
    "dist_to_star",
];

const DIST_RATIO_SLACK: f64 = 1e-12;

/// One recorded iterate. Metrics that do not apply to a run are `None` and serialize as
/// empty fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub avg_bellman_error: f64,
    pub n_error: Option<f64>,
    pub d_error: Option<f64>,
    pub dist_ratio: Option<f64>,
    pub grad_diff: Option<f64>,
    pub dist_to_star: Option<f64>,
}

impl TraceRow {
    fn values(&self) -> impl Iterator<Item = f64> {
        [
            Some(self.avg_bellman_error),
            self.n_error,
            self.d_error,
            self.dist_ratio,
            self.grad_diff,
            self.dist_to_star,
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    /// Row-level invariants: finite values, `dist_ratio ≤ 1` and `𝒩 ≥ (1 − γ)‖·‖_D²`.
    pub fn validate(&self, gamma: f64) -> Result<()> {
        for row in &self.rows {
            if row.values().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("non-finite metric at t = {}", row.t)));
            }
            if let Some(r) = row.dist_ratio {
                if !(0.0..=1.0 + DIST_RATIO_SLACK).contains(&r) {
                    return Err(Error::Schema(format!("dist_ratio {r} outside [0, 1] at t = {}", row.t)));
                }
            }
            if let (Some(n), Some(d)) = (row.n_error, row.d_error) {
                if n < (1.0 - gamma) * d - 1e-12 * (1.0 + d) {
                    return Err(Error::Schema(format!(
                        "n_error {n:e} below (1-γ)·d_error = {:e} at t = {}",
                        (1.0 - gamma) * d,
                        row.t
                    )));
                }
            }
        }
        if self.rows.windows(2).any(|w| w[0].t >= w[1].t) {
            return Err(Error::Schema("time index must increase".into()));
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            writer.serialize(row).map_err(|e| Error::Schema(e.to_string()))?;
        }
        if self.rows.is_empty() {
            writer.write_record(TRACE_HEADER).map_err(|e| Error::Schema(e.to_string()))?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::Schema(e.to_string()))?;
        if headers.iter().ne(TRACE_HEADER.iter().copied()) {
            return Err(Error::Schema(format!(
                "expected header `{}`, found `{}`",
                TRACE_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRow>, _>>()
            .map_err(|e| Error::Schema(e.to_string()))?;
        Ok(RunTrace { rows })
    }

    /// Validates, then writes the CSV.
    pub fn write(&self, path: &Path, gamma: f64) -> Result<()> {
        self.validate(gamma)?;
        let text = self.to_csv_string()?;
        std::fs::write(path, text).map_err(|e| Error::persist(path, e))
    }

    /// Reads and validates a CSV.
    pub fn read(path: &Path, gamma: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::persist(path, e))?;
        let trace = Self::from_csv_str(&text)?;
        trace.validate(gamma)?;
        Ok(trace)
    }
}
