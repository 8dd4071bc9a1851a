//! Constant versus width-scaled projection radius, run on identical seeds.

use std::path::Path;

use serde::Serialize;

use super::config::{RadiusScaling, TdRunConfig};
use super::run::{RunOptions, RunOutput};
use super::stats::{mean_sd, Check};
use super::sweep::{run_parallel, run_seed};
use crate::error::{Error, Result};

/// Fraction of the horizon treated as warm-up when judging `grad_diff`.
pub const WARMUP_FRACTION: f64 = 0.1;

/// Share of paired seeds on which the constant radius must win.
pub const MIN_WIN_FRACTION: f64 = 0.8;
/// Seed-mean final `dist_ratio` each cell must exceed.
pub const MIN_FINAL_DIST_RATIO: f64 = 0.95;
/// Floor for `grad_diff` after warm-up in constant-radius runs.
pub const MIN_GRAD_DIFF: f64 = 1e-3;

/// One seed at one width, both radius rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RadiusPair {
    pub width: usize,
    pub seed: u64,
    pub final_bellman_constant: f64,
    pub final_bellman_scaled: f64,
    pub final_dist_ratio_constant: f64,
    pub final_dist_ratio_scaled: f64,
    /// Smallest `grad_diff` recorded after warm-up in the constant-radius run.
    pub min_grad_diff_constant: f64,
}

impl RadiusPair {
    pub fn constant_wins(&self) -> bool {
        self.final_bellman_constant < self.final_bellman_scaled
    }
}

#[derive(Clone, Debug)]
pub struct RadiusReport {
    pub pairs: Vec<RadiusPair>,
    /// Full outputs per width as `(constant, scaled)` runs in seed order; kept for plotting.
    pub runs: Vec<(usize, Vec<RunOutput>, Vec<RunOutput>)>,
}

fn min_after_warmup(out: &RunOutput, horizon: usize) -> f64 {
    let warm = (WARMUP_FRACTION * horizon as f64).ceil() as usize;
    out.trace
        .rows
        .iter()
        .filter(|r| r.t > warm)
        .filter_map(|r| r.grad_diff)
        .fold(f64::INFINITY, f64::min)
}

/// For each width, runs `ω = ω₀` and `ω = ω₀ √(m_ref/m)` on the same `seeds` seeds.
pub fn radius_comparison(base: &TdRunConfig, widths: &[usize], seeds: usize, jobs: Option<usize>) -> Result<RadiusReport> {
    if base.projection.is_none() || base.net.is_none() {
        return Err(Error::config("projection", "the radius comparison needs a network and a projection"));
    }
    if widths.is_empty() || seeds == 0 {
        return Err(Error::InvalidArgument("need at least one width and one seed".into()));
    }
    let mut work = Vec::new();
    for &width in widths {
        for scaling in [RadiusScaling::Constant, RadiusScaling::InvSqrtWidth] {
            for i in 0..seeds {
                let mut cfg = base.clone();
                if let Some(net) = cfg.net.as_mut() {
                    net.width = width;
                }
                if let Some(p) = cfg.projection.as_mut() {
                    p.scaling = scaling;
                }
                cfg.seed = run_seed(base, i);
                cfg.validate()?;
                work.push(((width, scaling), cfg));
            }
        }
    }
    let mut outputs = run_parallel(&work, RunOptions::default(), jobs)?.into_iter();
    let mut pairs = Vec::new();
    let mut runs = Vec::new();
    for &width in widths {
        let constant: Vec<RunOutput> = outputs.by_ref().take(seeds).collect();
        let scaled: Vec<RunOutput> = outputs.by_ref().take(seeds).collect();
        for (i, (a, b)) in constant.iter().zip(&scaled).enumerate() {
            let last = |o: &RunOutput| {
                o.trace
                    .last()
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument("horizon shorter than record_every".into()))
            };
            let (la, lb) = (last(a)?, last(b)?);
            pairs.push(RadiusPair {
                width,
                seed: run_seed(base, i),
                final_bellman_constant: la.avg_bellman_error,
                final_bellman_scaled: lb.avg_bellman_error,
                final_dist_ratio_constant: la.dist_ratio.unwrap_or(f64::NAN),
                final_dist_ratio_scaled: lb.dist_ratio.unwrap_or(f64::NAN),
                min_grad_diff_constant: min_after_warmup(a, base.horizon),
            });
        }
        runs.push((width, constant, scaled));
    }
    Ok(RadiusReport { pairs, runs })
}

impl RadiusReport {
    /// Share of `(width, seed)` pairs where the constant radius ends with the lower error.
    pub fn win_fraction(&self) -> f64 {
        self.pairs.iter().filter(|p| p.constant_wins()).count() as f64 / self.pairs.len() as f64
    }

    pub fn checks(&self) -> Vec<Check> {
        let win = self.win_fraction();
        let mut out = vec![Check::new(
            "constant radius ends with lower Bellman error",
            win >= MIN_WIN_FRACTION,
            format!("{:.0}% of {} paired seeds", 100.0 * win, self.pairs.len()),
        )];
        for (width, constant, scaled) in &self.runs {
            for (label, runs) in [("constant", constant), ("scaled", scaled)] {
                let finals: Vec<f64> = runs
                    .iter()
                    .filter_map(|r| r.trace.last().and_then(|row| row.dist_ratio))
                    .collect();
                let (mean, _) = mean_sd(&finals);
                out.push(Check::new(
                    format!("dist_ratio reaches the boundary (m={width}, {label})"),
                    mean > MIN_FINAL_DIST_RATIO,
                    format!("seed-mean final dist_ratio {mean:.4}"),
                ));
            }
        }
        let min_gd = self
            .pairs
            .iter()
            .map(|p| p.min_grad_diff_constant)
            .fold(f64::INFINITY, f64::min);
        out.push(Check::new(
            "grad_diff stays away from zero after warm-up (constant radius)",
            min_gd > MIN_GRAD_DIFF,
            format!("smallest value {min_gd:.3e}"),
        ));
        out
    }

    pub fn paired_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.pairs {
            w.serialize(p).map_err(|e| Error::Schema(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))?;
        // width is a configuration column
        Ok(text.replacen("width,", "cfg_width,", 1))
    }

    /// Writes `paired.csv` and one trace per run as `w{width}_{constant|scaled}_seed{i}.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::persist(dir, e))?;
        for (width, constant, scaled) in &self.runs {
            for (label, runs) in [("constant", constant), ("scaled", scaled)] {
                for (i, out) in runs.iter().enumerate() {
                    out.trace.write(&dir.join(format!("w{width}_{label}_seed{i:03}.csv")), out.gamma)?;
                }
            }
        }
        let path = dir.join("paired.csv");
        std::fs::write(&path, self.paired_csv()?).map_err(|e| Error::persist(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_share_seeds() {
        let base = crate::experiments::run::tests::small_config();
        let report = radius_comparison(&base, &[4, 16], 3, Some(2)).unwrap();
        assert_eq!(report.pairs.len(), 6);
        assert_eq!(report.pairs[0].seed, report.pairs[3].seed);
        assert!((0.0..=1.0).contains(&report.win_fraction()));
        let csv = report.paired_csv().unwrap();
        assert!(csv.starts_with("cfg_width,seed,final_bellman_constant"));
        assert_eq!(csv.lines().count(), 7);
    }
}
