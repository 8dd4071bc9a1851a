//! Unprojected one-hidden-layer TD with `α_t = 1/(λ(t+1))` against a nearby representable
//! target.

use std::path::Path;

use serde::Serialize;

use super::config::{Algorithm, TdRunConfig};
use super::run::{RunOptions, RunOutput};
use super::stats::Check;
use super::sweep::{run_parallel, run_seed};
use crate::error::{Error, Result};

/// A run counts as bounded if it never diverged and `‖θ_t − θ*‖²` stayed within this
/// multiple of its starting value.
pub const BOUNDED_FACTOR: f64 = 100.0;

/// Seed-averaged final over initial squared distance must fall below this.
pub const MAX_FINAL_RATIO: f64 = 0.01;
/// Share of seeds that must stay bounded.
pub const MIN_BOUNDED_FRACTION: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AppendixBSeed {
    pub seed: u64,
    pub lambda: f64,
    pub sigma_min: f64,
    pub initial_dist_sq: f64,
    pub final_dist_sq: f64,
    pub max_dist_sq: f64,
    pub diverged: bool,
}

impl AppendixBSeed {
    pub fn bounded(&self) -> bool {
        !self.diverged && self.max_dist_sq <= BOUNDED_FACTOR * self.initial_dist_sq
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AppendixBReport {
    pub seeds: Vec<AppendixBSeed>,
    /// Seed mean of `‖θ_t − θ*‖²` at each recorded `t` (diverged runs excluded from the
    /// rows after they stop).
    pub mean_curve: Vec<(usize, f64)>,
}

impl AppendixBReport {
    /// Seed-averaged final distance over seed-averaged initial distance, both squared.
    /// Diverged runs make this infinite.
    pub fn final_ratio(&self) -> f64 {
        if self.seeds.iter().any(|s| s.diverged) {
            return f64::INFINITY;
        }
        let fin: f64 = self.seeds.iter().map(|s| s.final_dist_sq).sum();
        let init: f64 = self.seeds.iter().map(|s| s.initial_dist_sq).sum();
        fin / init
    }

    pub fn bounded_fraction(&self) -> f64 {
        self.seeds.iter().filter(|s| s.bounded()).count() as f64 / self.seeds.len() as f64
    }

    pub fn checks(&self) -> Vec<Check> {
        let ratio = self.final_ratio();
        let bounded = self.bounded_fraction();
        vec![
            Check::new(
                "distance to target shrinks below 1% of its start",
                ratio < MAX_FINAL_RATIO,
                format!("seed-averaged final/initial = {ratio:.4e}"),
            ),
            Check::new(
                "runs stay bounded",
                bounded >= MIN_BOUNDED_FRACTION,
                format!("{:.0}% of {} seeds", 100.0 * bounded, self.seeds.len()),
            ),
        ]
    }

    pub fn seeds_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.seeds {
            w.serialize(s).map_err(|e| Error::Schema(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))
    }

    /// Writes `seeds.csv` and `mean_dist_sq.csv` (columns `t,mean_dist_sq`).
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::persist(dir, e))?;
        let path = dir.join("seeds.csv");
        std::fs::write(&path, self.seeds_csv()?).map_err(|e| Error::persist(&path, e))?;
        let mut text = String::from("t,mean_dist_sq\n");
        for (t, v) in &self.mean_curve {
            text.push_str(&format!("{t},{v}\n"));
        }
        let path = dir.join("mean_dist_sq.csv");
        std::fs::write(&path, text).map_err(|e| Error::persist(&path, e))
    }
}

fn summarize(seed: u64, out: &RunOutput) -> Result<AppendixBSeed> {
    let missing = || Error::InvalidArgument("the run recorded no distance to the target".into());
    let initial = out.initial.dist_to_star.ok_or_else(missing)?;
    let dists: Vec<f64> = out.trace.rows.iter().filter_map(|r| r.dist_to_star).collect();
    let last = dists.last().copied().unwrap_or(initial);
    let lambda = match out.step_size {
        crate::td::StepSize::InverseTime { lambda } => lambda,
        crate::td::StepSize::Constant { .. } => f64::NAN,
    };
    Ok(AppendixBSeed {
        seed,
        lambda,
        sigma_min: out.sigma_min.unwrap_or(f64::NAN),
        initial_dist_sq: initial * initial,
        final_dist_sq: last * last,
        max_dist_sq: dists.iter().fold(initial, |m, d| m.max(*d)).powi(2),
        diverged: out.diverged_at.is_some(),
    })
}

/// Runs `base` (an unprojected single-layer config with a target) over `seeds` seeds.
/// Divergence is recorded rather than raised.
pub fn appendix_b(base: &TdRunConfig, seeds: usize, jobs: Option<usize>) -> Result<AppendixBReport> {
    if base.algorithm != Algorithm::UnprojectedSingleLayer {
        return Err(Error::config("algorithm", "needs unprojected_single_layer"));
    }
    if base.target.is_none() {
        return Err(Error::config("target", "needs a representable target"));
    }
    if seeds == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let work: Vec<(u64, TdRunConfig)> = (0..seeds)
        .map(|i| {
            let mut cfg = base.clone();
            cfg.seed = run_seed(base, i);
            (cfg.seed, cfg)
        })
        .collect();
    let outputs = run_parallel(&work, RunOptions { allow_divergence: true }, jobs)?;
    let seeds = work
        .iter()
        .zip(&outputs)
        .map(|((seed, _), out)| summarize(*seed, out))
        .collect::<Result<Vec<_>>>()?;

    let rows = outputs.iter().map(|o| o.trace.rows.len()).max().unwrap_or(0);
    let mut mean_curve = Vec::with_capacity(rows);
    for k in 0..rows {
        let vals: Vec<(usize, f64)> = outputs
            .iter()
            .filter_map(|o| o.trace.rows.get(k).and_then(|r| r.dist_to_star.map(|d| (r.t, d * d))))
            .collect();
        if let Some(&(t, _)) = vals.first() {
            mean_curve.push((t, vals.iter().map(|v| v.1).sum::<f64>() / vals.len() as f64));
        }
    }
    Ok(AppendixBReport { seeds, mean_curve })
}
