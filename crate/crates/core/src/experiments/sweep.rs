//! Grids of runs executed in parallel, with per-run traces and a one-row-per-cell summary.

use std::path::Path;

use rayon::prelude::*;

use super::config::{SweepSpec, TdRunConfig};
use super::run::{run, RunOptions, RunOutput};
use super::stats::mean_sd;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct CellResult {
    pub config: TdRunConfig,
    /// One output per seed, in seed order.
    pub runs: Vec<RunOutput>,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub cells: Vec<CellResult>,
}

/// Seed of the `i`-th repetition; shared by every cell so comparisons are paired.
pub fn run_seed(base: &TdRunConfig, i: usize) -> u64 {
    base.seed.wrapping_add(i as u64)
}

/// Runs every `(cell, seed)` pair on `jobs` threads (all cores when `None`). The result does
/// not depend on the thread count.
pub fn run_sweep(spec: &SweepSpec, opts: RunOptions, jobs: Option<usize>) -> Result<SweepOutput> {
    spec.validate()?;
    let cells = spec.cells();
    let work: Vec<(usize, TdRunConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, cell)| {
            (0..spec.seeds).map(move |i| {
                let mut cfg = cell.clone();
                cfg.seed = run_seed(&spec.base, i);
                (c, cfg)
            })
        })
        .collect();
    let outputs = run_parallel(&work, opts, jobs)?;
    let mut grouped: Vec<CellResult> = cells
        .into_iter()
        .map(|config| CellResult {
            config,
            runs: Vec::with_capacity(spec.seeds),
        })
        .collect();
    for ((c, _), out) in work.into_iter().zip(outputs) {
        grouped[c].runs.push(out);
    }
    Ok(SweepOutput { cells: grouped })
}

pub(crate) fn run_parallel<T: Sync>(
    work: &[(T, TdRunConfig)],
    opts: RunOptions,
    jobs: Option<usize>,
) -> Result<Vec<RunOutput>> {
    let job = || work.par_iter().map(|(_, cfg)| run(cfg, opts)).collect::<Result<Vec<_>>>();
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    }
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

/// Columns of the sweep summary; configuration columns carry the `cfg_` prefix.
pub const SUMMARY_HEADER: [&str; 20] = [
    "cfg_cell",
    "cfg_algorithm",
    "cfg_env",
    "cfg_depth",
    "cfg_width",
    "cfg_activation",
    "cfg_horizon",
    "cfg_record_every",
    "cfg_omega",
    "cfg_radius_scaling",
    "cfg_sampling",
    "cfg_seeds",
    "final_avg_bellman_error_mean",
    "final_avg_bellman_error_sd",
    "time_avg_n_error_mean",
    "time_avg_n_error_sd",
    "final_n_error_mean",
    "final_dist_ratio_mean",
    "final_grad_diff_mean",
    "diverged_runs",
];

impl SweepOutput {
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SUMMARY_HEADER).map_err(|e| Error::Schema(e.to_string()))?;
        for (c, cell) in self.cells.iter().enumerate() {
            let cfg = &cell.config;
            let last = |f: fn(&super::trace::TraceRow) -> Option<f64>| -> Vec<f64> {
                cell.runs.iter().filter_map(|r| r.trace.last().and_then(f)).collect()
            };
            let (abe_m, abe_sd) = mean_sd(&last(|r| Some(r.avg_bellman_error)));
            let avg: Vec<f64> = cell.runs.iter().map(|r| r.time_avg_n_error).collect();
            let (avg_m, avg_sd) = mean_sd(&avg);
            let (n_m, _) = mean_sd(&last(|r| r.n_error));
            let (dr_m, _) = mean_sd(&last(|r| r.dist_ratio));
            let (gd_m, _) = mean_sd(&last(|r| r.grad_diff));
            let env = serde_json::to_value(&cfg.env)
                .ok()
                .and_then(|v| v.get("kind").and_then(|k| k.as_str().map(String::from)))
                .unwrap_or_default();
            let record = [
                c.to_string(),
                cfg.algorithm.name().to_string(),
                env,
                cfg.net.map(|n| n.depth.to_string()).unwrap_or_default(),
                cfg.net.map(|n| n.width.to_string()).unwrap_or_default(),
                cfg.net.map(|n| n.activation.to_string()).unwrap_or_default(),
                cfg.horizon.to_string(),
                cfg.record_every.to_string(),
                fmt_opt(cfg.omega()),
                cfg.projection.map(|p| p.scaling.name().to_string()).unwrap_or_default(),
                serde_json::to_value(cfg.sampling)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                cell.runs.len().to_string(),
                fmt(abe_m),
                fmt(abe_sd),
                fmt(avg_m),
                fmt(avg_sd),
                fmt(n_m),
                fmt(dr_m),
                fmt(gd_m),
                cell.runs.iter().filter(|r| r.diverged_at.is_some()).count().to_string(),
            ];
            w.write_record(&record).map_err(|e| Error::Schema(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))
    }

    /// Writes `cell{c}_seed{i}.csv` for every run and `summary.csv`, all under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::persist(dir, e))?;
        for (c, cell) in self.cells.iter().enumerate() {
            for (i, out) in cell.runs.iter().enumerate() {
                out.trace.write(&dir.join(format!("cell{c:03}_seed{i:03}.csv")), out.gamma)?;
            }
        }
        let path = dir.join("summary.csv");
        std::fs::write(&path, self.summary_csv()?).map_err(|e| Error::persist(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::RadiusScaling;

    #[test]
    fn thread_count_does_not_change_results() {
        let base = crate::experiments::run::tests::small_config();
        let spec = SweepSpec {
            base,
            widths: vec![4, 8],
            horizons: vec![],
            radius_scalings: vec![RadiusScaling::Constant, RadiusScaling::InvSqrtWidth],
            sampling_modes: vec![],
            seeds: 2,
        };
        let one = run_sweep(&spec, RunOptions::default(), Some(1)).unwrap();
        let many = run_sweep(&spec, RunOptions::default(), Some(4)).unwrap();
        assert_eq!(one.summary_csv().unwrap(), many.summary_csv().unwrap());
        for (a, b) in one.cells.iter().zip(&many.cells) {
            for (x, y) in a.runs.iter().zip(&b.runs) {
                assert_eq!(x.trace, y.trace);
            }
        }
        let text = one.summary_csv().unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().next().unwrap().starts_with("cfg_cell,cfg_algorithm"));
    }
}
