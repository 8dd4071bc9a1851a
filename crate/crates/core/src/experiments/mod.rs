//! Runs, sweeps and the scaling experiments built on them.

pub mod appendix_b;
pub mod config;
pub mod envelope;
pub mod radius;
pub mod run;
pub mod stats;
pub mod sweep;
pub mod theorem31;
pub mod trace;

pub use appendix_b::{appendix_b, AppendixBReport, AppendixBSeed};
pub use config::{
    Algorithm, BellmanMetric, EnvConfig, NetSpec, Projection, RadiusScaling, StepSizeSpec, SweepSpec, TargetSpec,
    TdRunConfig,
};
pub use envelope::RecursionBoundChecker;
pub use radius::{radius_comparison, RadiusPair, RadiusReport};
pub use run::{run, run_to_dir, stream_seed, RunOptions, RunOutput};
pub use stats::{all_pass, mean_sd, Check, Paired};
pub use sweep::{run_sweep, SweepOutput};
pub use theorem31::{theorem31_sweep, Theorem31Report};
pub use trace::{RunTrace, TraceRow, TRACE_HEADER};
