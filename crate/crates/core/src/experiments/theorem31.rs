//! Width and horizon scaling of the time-averaged 𝒩-error against a representable target,
//! with `α = scale/√T`.

use std::path::Path;

use serde::Serialize;

use super::config::{StepSizeSpec, TdRunConfig};
use super::run::RunOptions;
use super::stats::{mean_sd, Check, Paired};
use super::sweep::{run_parallel, run_seed};
use crate::error::{Error, Result};
use crate::td::SamplingMode;

/// Paired drops must exceed this many standard errors.
pub const SIGNIFICANCE: f64 = 2.0;
/// Markov and i.i.d. time averages must agree within this factor.
pub const MARKOV_FACTOR: f64 = 3.0;

/// Mean 𝒩-error over the last quarter of the recorded rows.
pub fn plateau(trace: &super::trace::RunTrace) -> f64 {
    let n = trace.rows.len();
    let tail = &trace.rows[n - n.div_ceil(4).max(1).min(n)..];
    let vals: Vec<f64> = tail.iter().filter_map(|r| r.n_error).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[derive(Clone, Debug, Serialize)]
pub struct Theorem31Cell {
    pub width: usize,
    pub horizon: usize,
    pub sampling: SamplingMode,
    /// Per seed, in seed order.
    pub time_avg: Vec<f64>,
    pub plateau: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Theorem31Report {
    pub cells: Vec<Theorem31Cell>,
}

/// Runs every `(width, horizon, sampling mode)` cell over `seeds` paired seeds. The base
/// config must carry a target; its step size is replaced by `scale/√T`, keeping `scale` from
/// an `inverse_sqrt_horizon` base and using 1 otherwise.
pub fn theorem31_sweep(
    base: &TdRunConfig,
    widths: &[usize],
    horizons: &[usize],
    modes: &[SamplingMode],
    seeds: usize,
    jobs: Option<usize>,
) -> Result<Theorem31Report> {
    if base.target.is_none() {
        return Err(Error::config("target", "the scaling sweep needs a representable target"));
    }
    if base.net.is_none() {
        return Err(Error::config("net", "the scaling sweep needs a network"));
    }
    if widths.is_empty() || horizons.is_empty() || modes.is_empty() || seeds == 0 {
        return Err(Error::InvalidArgument("empty sweep axis".into()));
    }
    let scale = match base.step_size {
        StepSizeSpec::InverseSqrtHorizon { scale } => scale,
        _ => 1.0,
    };
    let mut keys = Vec::new();
    let mut work = Vec::new();
    for &width in widths {
        for &horizon in horizons {
            for &mode in modes {
                keys.push((width, horizon, mode));
                for i in 0..seeds {
                    let mut cfg = base.clone();
                    if let Some(net) = cfg.net.as_mut() {
                        net.width = width;
                    }
                    cfg.horizon = horizon;
                    cfg.sampling = mode;
                    cfg.step_size = StepSizeSpec::InverseSqrtHorizon { scale };
                    cfg.seed = run_seed(base, i);
                    cfg.validate()?;
                    work.push((keys.len() - 1, cfg));
                }
            }
        }
    }
    let outputs = run_parallel(&work, RunOptions::default(), jobs)?;
    let mut cells: Vec<Theorem31Cell> = keys
        .into_iter()
        .map(|(width, horizon, sampling)| Theorem31Cell {
            width,
            horizon,
            sampling,
            time_avg: Vec::with_capacity(seeds),
            plateau: Vec::with_capacity(seeds),
        })
        .collect();
    for ((c, _), out) in work.iter().zip(outputs) {
        cells[*c].time_avg.push(out.time_avg_n_error);
        cells[*c].plateau.push(plateau(&out.trace));
    }
    Ok(Theorem31Report { cells })
}

impl Theorem31Report {
    pub fn cell(&self, width: usize, horizon: usize, sampling: SamplingMode) -> Option<&Theorem31Cell> {
        self.cells
            .iter()
            .find(|c| c.width == width && c.horizon == horizon && c.sampling == sampling)
    }

    fn pair(
        &self,
        a: (usize, usize, SamplingMode),
        b: (usize, usize, SamplingMode),
        pick: fn(&Theorem31Cell) -> &Vec<f64>,
    ) -> Result<Paired> {
        let find = |k: (usize, usize, SamplingMode)| {
            self.cell(k.0, k.1, k.2)
                .ok_or_else(|| Error::InvalidArgument(format!("no cell for width {}, horizon {}", k.0, k.1)))
        };
        Paired::new(pick(find(a)?), pick(find(b)?))
    }

    /// Paired drop in time-averaged error from horizon `short` to `long`.
    pub fn horizon_effect(&self, width: usize, short: usize, long: usize, mode: SamplingMode) -> Result<Paired> {
        self.pair((width, short, mode), (width, long, mode), |c| &c.time_avg)
    }

    /// Paired drop in plateau error from width `narrow` to `wide`.
    pub fn width_effect(&self, horizon: usize, narrow: usize, wide: usize, mode: SamplingMode) -> Result<Paired> {
        self.pair((narrow, horizon, mode), (wide, horizon, mode), |c| &c.plateau)
    }

    /// Ratio of seed-mean time-averaged errors, Markov over i.i.d.
    pub fn markov_ratio(&self, width: usize, horizon: usize) -> Result<f64> {
        let get = |m| {
            self.cell(width, horizon, m)
                .map(|c| mean_sd(&c.time_avg).0)
                .ok_or_else(|| Error::InvalidArgument(format!("no cell for width {width}, horizon {horizon}")))
        };
        Ok(get(SamplingMode::Markov)? / get(SamplingMode::Iid)?)
    }

    fn axis<T: Copy + PartialOrd>(&self, key: fn(&Theorem31Cell) -> T) -> Vec<T> {
        let mut out: Vec<T> = Vec::new();
        for c in &self.cells {
            if !out.contains(&key(c)) {
                out.push(key(c));
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    /// Time average falls from the shortest to the longest horizon at every width, plateau
    /// falls from the narrowest to the widest network at every horizon, and Markov sampling
    /// stays within [`MARKOV_FACTOR`] of i.i.d.
    pub fn checks(&self) -> Result<Vec<Check>> {
        let widths = self.axis(|c| c.width);
        let horizons = self.axis(|c| c.horizon);
        let modes: Vec<SamplingMode> = [SamplingMode::Iid, SamplingMode::Markov]
            .into_iter()
            .filter(|m| self.cells.iter().any(|c| c.sampling == *m))
            .collect();
        let mode_name = |m: SamplingMode| if m == SamplingMode::Iid { "iid" } else { "markov" };
        let mut out = Vec::new();
        let (short, long) = (horizons[0], horizons[horizons.len() - 1]);
        let (narrow, wide) = (widths[0], widths[widths.len() - 1]);
        for &mode in &modes {
            if short != long {
                for &w in &widths {
                    let p = self.horizon_effect(w, short, long, mode)?;
                    out.push(Check::new(
                        format!("time average falls with horizon (m={w}, {})", mode_name(mode)),
                        p.decreases(SIGNIFICANCE),
                        format!("{:.3e} -> {:.3e}, drop {:.3e} ± {:.3e}", p.mean_before, p.mean_after, p.mean_drop, p.se),
                    ));
                }
            }
            if narrow != wide {
                for &h in &horizons {
                    let p = self.width_effect(h, narrow, wide, mode)?;
                    out.push(Check::new(
                        format!("plateau falls with width (T={h}, {})", mode_name(mode)),
                        p.decreases(SIGNIFICANCE),
                        format!("{:.3e} -> {:.3e}, drop {:.3e} ± {:.3e}", p.mean_before, p.mean_after, p.mean_drop, p.se),
                    ));
                }
            }
        }
        if modes.len() == 2 {
            for &w in &widths {
                for &h in &horizons {
                    let r = self.markov_ratio(w, h)?;
                    out.push(Check::new(
                        format!("markov within {MARKOV_FACTOR}x of iid (m={w}, T={h})"),
                        (1.0 / MARKOV_FACTOR..=MARKOV_FACTOR).contains(&r),
                        format!("ratio {r:.3}"),
                    ));
                }
            }
        }
        Ok(out)
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Schema(e.to_string());
        w.write_record([
            "cfg_width",
            "cfg_horizon",
            "cfg_sampling",
            "cfg_seeds",
            "time_avg_n_error_mean",
            "time_avg_n_error_sd",
            "plateau_n_error_mean",
            "plateau_n_error_sd",
        ])
        .map_err(csv_err)?;
        for c in &self.cells {
            let (tm, ts) = mean_sd(&c.time_avg);
            let (pm, ps) = mean_sd(&c.plateau);
            let mode = match c.sampling {
                SamplingMode::Iid => "iid",
                SamplingMode::Markov => "markov",
            };
            w.write_record([
                c.width.to_string(),
                c.horizon.to_string(),
                mode.to_string(),
                c.time_avg.len().to_string(),
                tm.to_string(),
                ts.to_string(),
                pm.to_string(),
                ps.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::persist(dir, e))?;
        let path = dir.join("theorem31_summary.csv");
        std::fs::write(&path, self.summary_csv()?).map_err(|e| Error::persist(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::TargetSpec;

    #[test]
    fn small_sweep_has_every_cell() {
        let mut base = crate::experiments::run::tests::small_config();
        base.target = Some(TargetSpec { rho: 0.5 });
        let report = theorem31_sweep(&base, &[4, 8], &[40, 80], &[SamplingMode::Iid, SamplingMode::Markov], 3, Some(2))
            .unwrap();
        assert_eq!(report.cells.len(), 8);
        assert!(report.cells.iter().all(|c| c.time_avg.len() == 3 && c.plateau.iter().all(|p| p.is_finite())));
        assert!(report.horizon_effect(4, 40, 80, SamplingMode::Iid).is_ok());
        assert!(report.markov_ratio(8, 80).unwrap() > 0.0);
        assert_eq!(report.summary_csv().unwrap().lines().count(), 9);
    }

    #[test]
    fn target_is_required() {
        let base = crate::experiments::run::tests::small_config();
        assert!(theorem31_sweep(&base, &[4], &[40], &[SamplingMode::Iid], 1, None).is_err());
    }
}
