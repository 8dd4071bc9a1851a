//! A single TD run from a [`TdRunConfig`], with metrics recorded along the way.

use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::config::{Algorithm, BellmanMetric, StepSizeSpec, TdRunConfig};
use super::trace::{RunTrace, TraceRow};
use crate::error::{Error, Result};
use crate::model::{EvalTask, LinearModel, ValueModel};
use crate::net::{init, Checkpoint};
use crate::norms;
use crate::td::{inverse_time_threshold, Sampler, StepSize, TdState};

const EMA_DECAY: f64 = 0.99;
/// Values beyond this magnitude count as divergence, since the squared metrics would overflow.
const VALUE_LIMIT: f64 = 1e100;

/// Independent seed for one consumer of randomness within a run.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const NET_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;
const TARGET_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Stop and report instead of failing when the weights blow up.
    pub allow_divergence: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: RunTrace,
    /// Metrics at `t = 0`.
    pub initial: TraceRow,
    /// Mean of `𝒩(V(θ_t) − V_ref)` over the visited iterates `t < T`.
    pub time_avg_n_error: f64,
    pub diverged_at: Option<usize>,
    pub omega: Option<f64>,
    pub step_size: StepSize,
    /// Weighted smallest singular value at the target, when the step size needed it.
    pub sigma_min: Option<f64>,
    pub gamma: f64,
    /// Final network weights; absent for linear runs.
    pub checkpoint: Option<Checkpoint>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: &'a TdRunConfig,
    omega: Option<f64>,
    step_size: StepSize,
    sigma_min: Option<f64>,
    time_avg_n_error: f64,
    diverged_at: Option<usize>,
    initial: &'a TraceRow,
    last: Option<&'a TraceRow>,
}

impl RunOutput {
    pub fn summary_json(&self, cfg: &TdRunConfig) -> Result<String> {
        let summary = RunSummary {
            config: cfg,
            omega: self.omega,
            step_size: self.step_size,
            sigma_min: self.sigma_min,
            time_avg_n_error: self.time_avg_n_error,
            diverged_at: self.diverged_at,
            initial: &self.initial,
            last: self.trace.last(),
        };
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Schema(e.to_string()))
    }
}

/// Runs `cfg` and writes `trace.csv`, `summary.json` and, for networks, `checkpoint.json`
/// into `dir`.
pub fn run_to_dir(cfg: &TdRunConfig, opts: RunOptions, dir: &Path) -> Result<RunOutput> {
    let out = run(cfg, opts)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::persist(dir, e))?;
    out.trace.write(&dir.join("trace.csv"), out.gamma)?;
    let summary = dir.join("summary.json");
    std::fs::write(&summary, out.summary_json(cfg)?).map_err(|e| Error::persist(&summary, e))?;
    if let Some(ckpt) = &out.checkpoint {
        let path = dir.join("checkpoint.json");
        let text = serde_json::to_string(ckpt).map_err(|e| Error::persist(&path, e))?;
        std::fs::write(&path, text).map_err(|e| Error::persist(&path, e))?;
    }
    Ok(out)
}

pub fn run(cfg: &TdRunConfig, opts: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let mdp = cfg.env.build()?;
    let task = EvalTask::from_mdp(&mdp, &crate::mdp::Policy::uniform(mdp.num_states(), mdp.num_actions()))?;
    match (cfg.algorithm, cfg.net) {
        (Algorithm::Linear, _) => {
            let model = LinearModel::zeros(task.feature_dim());
            execute(cfg, task, model, 1.0, opts, |_| None)
        }
        (_, Some(spec)) => {
            let net_cfg = spec.config(task.feature_dim(), stream_seed(cfg.seed, NET_STREAM));
            let net = init(&net_cfg)?;
            let lipschitz = net_cfg.activation.lipschitz();
            let b = net.b.clone();
            execute(cfg, task, net, lipschitz, opts, move |theta: &DVector<f64>| {
                Some(Checkpoint {
                    config: net_cfg,
                    theta: theta.as_slice().to_vec(),
                    b: b.as_slice().to_vec(),
                })
            })
        }
        (_, None) => Err(Error::config("net", "missing network")),
    }
}

fn random_unit(dim: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v = DVector::from_iterator(dim, (0..dim).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

struct Recorder<M> {
    task: EvalTask,
    reference: DVector<f64>,
    theta_star: Option<DVector<f64>>,
    omega: Option<f64>,
    model0: M,
    grads0: Vec<Option<DVector<f64>>>,
    metric: BellmanMetric,
}

impl<M: ValueModel> Recorder<M> {
    /// Values at the current iterate; overflow counts as divergence at step `t`.
    fn values(&self, model: &M, t: usize) -> Result<DVector<f64>> {
        let values = self.task.values(model)?;
        if values.iter().all(|v| v.abs() < VALUE_LIMIT) {
            Ok(values)
        } else {
            Err(Error::NonFiniteUpdate { step: t })
        }
    }

    fn n_error(&self, model: &M, t: usize) -> Result<f64> {
        let values = self.values(model, t)?;
        norms::n_value(&(&values - &self.reference), &self.task.chain)
    }

    fn row(&mut self, t: usize, model: &M, last_state: Option<usize>, ema: Option<f64>) -> Result<TraceRow> {
        let values = self.values(model, t)?;
        let chain = &self.task.chain;
        let residual = &chain.reward + chain.gamma * (&chain.p * &values) - &values;
        let exact: f64 = chain.mu.iter().zip(residual.iter()).map(|(m, r)| m * r * r).sum();
        let avg_bellman_error = match (self.metric, ema) {
            (BellmanMetric::Ema, Some(e)) => e,
            _ => exact,
        };
        let report = norms::n_functional(&(&values - &self.reference), chain)?;
        let theta = model.theta();
        let dist0 = (theta - self.model0.theta()).norm();
        let grad_diff = match last_state {
            Some(s) => {
                if self.grads0[s].is_none() {
                    self.grads0[s] = Some(self.model0.grad(&self.task.states[s])?);
                }
                let g = model.grad(&self.task.states[s])?;
                Some((&g - self.grads0[s].as_ref().unwrap()).norm())
            }
            None => None,
        };
        Ok(TraceRow {
            t,
            avg_bellman_error,
            n_error: Some(report.n_value),
            d_error: Some(report.d_norm_sq),
            dist_ratio: self.omega.map(|w| dist0 / w),
            grad_diff,
            dist_to_star: self.theta_star.as_ref().map(|s| (theta - s).norm()),
        })
    }
}

fn execute<M: ValueModel>(
    cfg: &TdRunConfig,
    task: EvalTask,
    model: M,
    lipschitz: f64,
    opts: RunOptions,
    checkpoint: impl Fn(&DVector<f64>) -> Option<Checkpoint>,
) -> Result<RunOutput> {
    let omega = cfg.omega();
    let theta0 = model.theta().clone();
    let (task, theta_star) = match cfg.target {
        Some(target) => {
            let u = random_unit(theta0.len(), stream_seed(cfg.seed, TARGET_STREAM));
            let star = &theta0 + u * target.rho;
            (task.retarget(&model.at(&star)?)?, Some(star))
        }
        None => (task, None),
    };
    let reference = match &theta_star {
        Some(star) => task.values(&model.at(star)?)?,
        None => task.chain.v_star.clone(),
    };

    let (step_size, sigma_min) = match cfg.step_size {
        StepSizeSpec::InverseTimeAuto { factor } => {
            let star = theta_star.as_ref().expect("validated: auto step size needs a target");
            let jac = task.jacobian(&model.at(star)?)?;
            let sigma = norms::sigma_min_2d(&jac, &task.chain)?;
            let lambda = factor * inverse_time_threshold(sigma, lipschitz, task.chain.gamma)?;
            (StepSize::InverseTime { lambda }, Some(sigma))
        }
        fixed => (fixed.resolve_fixed(cfg.horizon).expect("non-auto step sizes resolve"), None),
    };
    step_size.validate().map_err(|e| Error::config("step_size", e.to_string()))?;

    let projected = match cfg.algorithm {
        Algorithm::UnprojectedSingleLayer => None,
        _ => omega,
    };
    let sampled = cfg.algorithm != Algorithm::MeanPath;
    let mut sampler = if sampled {
        Some(Sampler::with_start(
            &task.chain,
            cfg.sampling,
            stream_seed(cfg.seed, SAMPLER_STREAM),
            cfg.markov_start,
        )?)
    } else {
        None
    };

    let gamma = task.chain.gamma;
    let mut recorder = Recorder {
        grads0: vec![None; task.n()],
        task,
        reference,
        theta_star,
        omega: projected,
        model0: model.clone(),
        metric: cfg.bellman_metric,
    };
    let mut state = TdState::new(model);
    let initial = recorder.row(0, &state.model, None, None)?;

    let mut rows = Vec::with_capacity(cfg.horizon / cfg.record_every);
    let mut n_sum = 0.0;
    let mut n_count = 0usize;
    let mut ema: Option<f64> = None;
    let mut last_state = None;
    let mut diverged_at = None;
    for t in 0..cfg.horizon {
        let outcome = (|| -> Result<()> {
            if t % cfg.average_every == 0 {
                n_sum += recorder.n_error(&state.model, t)?;
                n_count += 1;
            }
            let alpha = step_size.at(t);
            match sampler.as_mut() {
                Some(sampler) => {
                    let transition = sampler.next_transition();
                    last_state = Some(transition.0);
                    let delta = state.step_sampled(&recorder.task, transition, alpha, projected)?;
                    let sq = delta * delta;
                    ema = Some(ema.map_or(sq, |e| EMA_DECAY * e + (1.0 - EMA_DECAY) * sq));
                }
                None => state.step_mean_path(&recorder.task, alpha, projected)?,
            }
            if (t + 1) % cfg.record_every == 0 {
                rows.push(recorder.row(t + 1, &state.model, last_state, ema)?);
            }
            Ok(())
        })();
        match outcome {
            Ok(()) => {}
            Err(Error::NonFiniteUpdate { step }) if opts.allow_divergence => {
                diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        }
    }

    Ok(RunOutput {
        trace: RunTrace { rows },
        initial,
        time_avg_n_error: if n_count > 0 { n_sum / n_count as f64 } else { f64::NAN },
        diverged_at,
        omega: projected,
        step_size,
        sigma_min,
        gamma,
        checkpoint: checkpoint(state.model.theta()),
    })
}
