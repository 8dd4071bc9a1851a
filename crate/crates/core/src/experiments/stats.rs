//! Seed statistics.

use serde::Serialize;

use crate::error::{Error, Result};

/// Sample mean and standard deviation (n − 1 denominator); NaN for an empty slice.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Per-seed differences `before − after` between two paired cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Paired {
    pub mean_before: f64,
    pub mean_after: f64,
    pub mean_drop: f64,
    /// Standard error of the mean drop.
    pub se: f64,
    pub n: usize,
}

impl Paired {
    pub fn new(before: &[f64], after: &[f64]) -> Result<Self> {
        if before.len() != after.len() || before.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "paired samples need equal, nonzero lengths ({} vs {})",
                before.len(),
                after.len()
            )));
        }
        let diffs: Vec<f64> = before.iter().zip(after).map(|(a, b)| a - b).collect();
        let (mean_drop, sd) = mean_sd(&diffs);
        Ok(Self {
            mean_before: mean_sd(before).0,
            mean_after: mean_sd(after).0,
            mean_drop,
            se: sd / (diffs.len() as f64).sqrt(),
            n: diffs.len(),
        })
    }

    /// The drop exceeds `k` standard errors.
    pub fn decreases(&self, k: f64) -> bool {
        self.mean_drop > k * self.se
    }
}

/// One pass/fail criterion of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}
