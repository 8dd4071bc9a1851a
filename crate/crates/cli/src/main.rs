//! `neural-td`: identity checks, single runs, sweeps and the scaling experiments.
//!
//! Exit codes: 0 on success, 1 when a check fails or a run breaks down, 2 for bad
//! configuration or arguments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use neural_td::experiments::{
    self, all_pass, appendix_b, radius_comparison, run_sweep, run_to_dir, theorem31_sweep, Check, RunOptions,
    SweepSpec, TdRunConfig,
};
use neural_td::net::{Activation, NetConfig, OutputScale};
use neural_td::probe::{log_log_slope, probe_csv, regularity_probe};
use neural_td::td::SamplingMode;
use neural_td::verify::{verify_identities, VerifyOptions};
use neural_td::Error;

const SEED_ENV: &str = "NEURAL_TD_SEED";

#[derive(Parser)]
#[command(name = "neural-td", version, about = "Neural TD policy-evaluation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run or sweep description (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; nothing is written elsewhere.
    #[arg(long)]
    out: PathBuf,
    /// Overrides NEURAL_TD_SEED, which overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the algebraic identities on randomized instances.
    VerifyIdentities {
        /// Instances per suite.
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        /// Base seed of the instance streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replaces every suite's tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Print the JSON report instead of the text one.
        #[arg(long)]
        json: bool,
        /// Also write report.txt and report.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run: trace.csv, summary.json and (for networks) checkpoint.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Record divergence and stop instead of failing.
        #[arg(long)]
        allow_divergence: bool,
    },
    /// A grid of runs: one trace per (cell, seed) and summary.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        allow_divergence: bool,
        /// Worker threads (all cores by default).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Constant against width-scaled projection radius on paired seeds.
    RadiusCompare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [80, 160])]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Time-averaged error against horizon, width and sampling mode.
    Theorem31 {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [32, 512])]
        widths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [2000, 20000])]
        horizons: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values = ["iid", "markov"])]
        modes: Vec<Mode>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Unprojected one-hidden-layer TD with the inverse-time schedule.
    AppendixB {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Empirical gradient norm and smoothness around initialization, per width.
    ProbeRegularity {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256, 512, 1024, 2048, 4096])]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        input_dim: usize,
        #[arg(long, default_value = "tanh")]
        activation: String,
        #[arg(long, value_enum, default_value_t = Scale::Unit)]
        output_scale: Scale,
        /// Ball radius around initialization.
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Iid,
    Markov,
}

impl From<Mode> for SamplingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Iid => SamplingMode::Iid,
            Mode::Markov => SamplingMode::Markov,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Unit,
    InvSqrtWidth,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } | Error::InvalidArgument(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn failed_checks(what: &str, checks: &[Check]) -> Failure {
    let first = checks.iter().find(|c| !c.pass).map(|c| c.name.as_str()).unwrap_or("?");
    Failure {
        code: 1,
        message: format!("{what}: check failed: {first}"),
    }
}

/// `--seed`, else `NEURAL_TD_SEED`, else `config`.
fn resolve_seed(flag: Option<u64>, config: u64) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got `{text}`"))),
        Err(_) => Ok(config),
    }
}

fn load_run(common: &Common) -> Result<TdRunConfig, Failure> {
    let mut cfg = TdRunConfig::load(&common.config)?;
    cfg.seed = resolve_seed(common.seed, cfg.seed)?;
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Failure {
            code: 1,
            message: format!("failed to create {}: {e}", parent.display()),
        })?;
    }
    std::fs::write(path, text).map_err(|e| Failure {
        code: 1,
        message: format!("failed to write {}: {e}", path.display()),
    })
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        println!("{} {}: {}", if c.pass { "pass" } else { "FAIL" }, c.name, c.detail);
    }
}

fn checks_json(checks: &[Check]) -> String {
    serde_json::to_string_pretty(checks).expect("checks serialize")
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::VerifyIdentities {
            seeds,
            seed,
            tolerance,
            json,
            out,
        } => {
            let report = verify_identities(&VerifyOptions {
                instances: seeds,
                seed,
                tolerance,
            })?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_text());
            }
            if let Some(dir) = out {
                write_file(&dir.join("report.txt"), &report.to_text())?;
                write_file(&dir.join("report.json"), &report.to_json())?;
            }
            match report.first_failure() {
                None => Ok(()),
                Some(s) => Err(Failure {
                    code: 1,
                    message: format!(
                        "identity check failed: {} (max gap {:.3e} over tolerance {:.1e})",
                        s.suite.name(),
                        s.max_gap,
                        s.tolerance
                    ),
                }),
            }
        }
        Command::Run {
            common,
            allow_divergence,
        } => {
            let cfg = load_run(&common)?;
            let out = run_to_dir(&cfg, RunOptions { allow_divergence }, &common.out)?;
            if let Some(step) = out.diverged_at {
                eprintln!("diverged at step {step}");
            }
            println!(
                "{} rows written to {}; time-averaged n_error {:.6e}",
                out.trace.rows.len(),
                common.out.join("trace.csv").display(),
                out.time_avg_n_error
            );
            Ok(())
        }
        Command::Sweep {
            common,
            allow_divergence,
            jobs,
        } => {
            let mut spec = SweepSpec::load(&common.config)?;
            spec.base.seed = resolve_seed(common.seed, spec.base.seed)?;
            let out = run_sweep(&spec, RunOptions { allow_divergence }, jobs)?;
            out.write(&common.out)?;
            println!(
                "{} cells x {} seeds written to {}",
                out.cells.len(),
                spec.seeds,
                common.out.display()
            );
            Ok(())
        }
        Command::RadiusCompare {
            common,
            widths,
            seeds,
            jobs,
        } => {
            let cfg = load_run(&common)?;
            let report = radius_comparison(&cfg, &widths, seeds, jobs)?;
            report.write(&common.out)?;
            let checks = report.checks();
            write_file(&common.out.join("checks.json"), &checks_json(&checks))?;
            print_checks(&checks);
            if all_pass(&checks) {
                Ok(())
            } else {
                Err(failed_checks("radius comparison", &checks))
            }
        }
        Command::Theorem31 {
            common,
            widths,
            horizons,
            modes,
            seeds,
            jobs,
        } => {
            let cfg = load_run(&common)?;
            let modes: Vec<SamplingMode> = modes.into_iter().map(Into::into).collect();
            let report = theorem31_sweep(&cfg, &widths, &horizons, &modes, seeds, jobs)?;
            report.write(&common.out)?;
            let checks = report.checks()?;
            write_file(&common.out.join("checks.json"), &checks_json(&checks))?;
            print_checks(&checks);
            if all_pass(&checks) {
                Ok(())
            } else {
                Err(failed_checks("scaling sweep", &checks))
            }
        }
        Command::AppendixB { common, seeds, jobs } => {
            let cfg = load_run(&common)?;
            let report = appendix_b(&cfg, seeds, jobs)?;
            report.write(&common.out)?;
            let checks = report.checks();
            write_file(&common.out.join("checks.json"), &checks_json(&checks))?;
            print_checks(&checks);
            if all_pass(&checks) {
                Ok(())
            } else {
                Err(failed_checks("unprojected run", &checks))
            }
        }
        Command::ProbeRegularity {
            out,
            depth,
            widths,
            input_dim,
            activation,
            output_scale,
            omega,
            trials,
            seed,
        } => {
            let activation: Activation = activation.parse().map_err(|e: Error| usage(e.to_string()))?;
            let scale = match output_scale {
                Scale::Unit => OutputScale::Unit,
                Scale::InvSqrtWidth => OutputScale::InvSqrtWidth,
            };
            let seed = resolve_seed(seed, 0)?;
            let first = *widths.first().ok_or_else(|| usage("need at least one width"))?;
            let base = NetConfig::new(depth, first, input_dim, activation, experiments::stream_seed(seed, 1))
                .with_output_scale(scale);
            let rows = regularity_probe(&base, &widths, omega, trials, seed)?;
            write_file(&out.join("probe.csv"), &probe_csv(&rows)?)?;
            for r in &rows {
                println!(
                    "m={:<6} lipschitz {:.4e}  smoothness {:.4e}",
                    r.width, r.lipschitz_est, r.smoothness_est
                );
            }
            if rows.len() >= 2 {
                let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.width as f64, r.smoothness_est)).collect();
                println!("log-log slope of smoothness against width: {:.3}", log_log_slope(&pts));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
