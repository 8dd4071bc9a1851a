//! Samplers and TD(0) updates: projected, mean-path, unprojected and linear, plus the
//! decomposition and step-size checks used to validate them.

use nalgebra::DVector;
use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mdp::{mixing_profile, PolicyChain, DEFAULT_MIXING_CAP};
use crate::model::{EvalTask, ValueModel};
use crate::norms;

/// Total-variation level the Markov burn-in is run to.
pub const BURN_IN_TV: f64 = 1e-3;
/// Relative tolerance between the two forms of the mean-path direction.
pub const FORM_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Iid,
    Markov,
}

/// How a Markov path is started.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkovStart {
    /// Initial state drawn exactly from `μ`.
    #[default]
    Stationary,
    /// Start in state 0 and discard `τ_mix(1e-3)` transitions.
    BurnIn,
}

/// Emits transitions `(s, s')` as state indices.
#[derive(Clone, Debug)]
pub struct Sampler {
    mode: SamplingMode,
    rng: ChaCha8Rng,
    stationary: WeightedIndex<f64>,
    rows: Vec<WeightedIndex<f64>>,
    current: usize,
    burn_in: usize,
}

impl Sampler {
    pub fn new(chain: &PolicyChain, mode: SamplingMode, seed: u64) -> Result<Self> {
        Self::with_start(chain, mode, seed, MarkovStart::Stationary)
    }

    pub fn with_start(
        chain: &PolicyChain,
        mode: SamplingMode,
        seed: u64,
        start: MarkovStart,
    ) -> Result<Self> {
        let weights = |w: Vec<f64>| {
            WeightedIndex::new(w).map_err(|e| Error::InvalidMdp(format!("bad sampling weights: {e}")))
        };
        let stationary = weights(chain.mu.iter().map(|&m| m.max(0.0)).collect())?;
        let rows = (0..chain.n())
            .map(|s| weights(chain.row(s)))
            .collect::<Result<Vec<_>>>()?;
        let mut sampler = Sampler {
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stationary,
            rows,
            current: 0,
            burn_in: 0,
        };
        if mode == SamplingMode::Markov {
            match start {
                MarkovStart::Stationary => {
                    sampler.current = sampler.stationary.sample(&mut sampler.rng);
                }
                MarkovStart::BurnIn => {
                    sampler.burn_in = mixing_profile(chain, BURN_IN_TV, DEFAULT_MIXING_CAP)?.tau_mix;
                    for _ in 0..sampler.burn_in {
                        sampler.current = sampler.rows[sampler.current].sample(&mut sampler.rng);
                    }
                }
            }
        }
        Ok(sampler)
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    /// Transitions discarded before the first emitted sample.
    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn next_transition(&mut self) -> (usize, usize) {
        let s = match self.mode {
            SamplingMode::Iid => self.stationary.sample(&mut self.rng),
            SamplingMode::Markov => self.current,
        };
        let next = self.rows[s].sample(&mut self.rng);
        self.current = next;
        (s, next)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSize {
    Constant { alpha: f64 },
    /// `α_t = 1 / (λ (t + 1))`
    InverseTime { lambda: f64 },
}

impl StepSize {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSize::Constant { alpha } => alpha,
            StepSize::InverseTime { lambda } => 1.0 / (lambda * (t as f64 + 1.0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSize::Constant { alpha } if alpha >= 0.0 && alpha.is_finite() => Ok(()),
            StepSize::InverseTime { lambda } if lambda > 0.0 && lambda.is_finite() => Ok(()),
            other => Err(Error::InvalidArgument(format!("invalid step size {other:?}"))),
        }
    }
}

/// `δ = R(s) + γV(s') − V(s)`
pub fn td_error<M: ValueModel>(model: &M, task: &EvalTask, s: usize, next: usize) -> Result<f64> {
    let v = model.value(&task.states[s])?;
    let v_next = model.value(&task.states[next])?;
    Ok(task.chain.reward[s] + task.chain.gamma * v_next - v)
}

/// The sampled direction `g = ∇V(s) δ` together with `δ`.
pub fn td_direction<M: ValueModel>(
    model: &M,
    task: &EvalTask,
    s: usize,
    next: usize,
) -> Result<(f64, DVector<f64>)> {
    let (v, mut g) = model.value_and_grad(&task.states[s])?;
    let v_next = model.value(&task.states[next])?;
    let delta = task.chain.reward[s] + task.chain.gamma * v_next - v;
    g *= delta;
    Ok((delta, g))
}

/// Euclidean projection onto the ball `‖x − θ₀‖ ≤ ω`.
pub fn project_ball(theta: &DVector<f64>, theta0: &DVector<f64>, omega: f64) -> DVector<f64> {
    let mut out = theta.clone();
    project_ball_in_place(&mut out, theta0, omega);
    out
}

pub fn project_ball_in_place(theta: &mut DVector<f64>, theta0: &DVector<f64>, omega: f64) {
    let dist = theta.iter().zip(theta0.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if dist > omega {
        let shrink = omega / dist;
        for (x, &c) in theta.iter_mut().zip(theta0.iter()) {
            *x = c + shrink * (*x - c);
        }
    }
}

/// A training run in progress: the model, its starting weights and the step counter.
#[derive(Clone, Debug)]
pub struct TdState<M> {
    pub t: usize,
    pub model: M,
    pub theta0: DVector<f64>,
    pub last_delta: f64,
}

impl<M: ValueModel> TdState<M> {
    pub fn new(model: M) -> Self {
        let theta0 = model.theta().clone();
        TdState {
            t: 0,
            model,
            theta0,
            last_delta: 0.0,
        }
    }

    fn apply(&mut self, direction: &DVector<f64>, alpha: f64, omega: Option<f64>) -> Result<()> {
        let theta = self.model.theta_mut();
        theta.axpy(alpha, direction, 1.0);
        if let Some(omega) = omega {
            project_ball_in_place(theta, &self.theta0, omega);
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUpdate { step: self.t });
        }
        self.t += 1;
        Ok(())
    }

    /// `θ ← Proj(θ + α ∇V(s) δ)`
    pub fn step_projected(&mut self, task: &EvalTask, transition: (usize, usize), alpha: f64, omega: f64) -> Result<f64> {
        self.step_sampled(task, transition, alpha, Some(omega))
    }

    /// `θ ← θ + α_t ∇V(s) δ` with no projection.
    pub fn step_unprojected(&mut self, task: &EvalTask, transition: (usize, usize), alpha: f64) -> Result<f64> {
        self.step_sampled(task, transition, alpha, None)
    }

    pub fn step_sampled(
        &mut self,
        task: &EvalTask,
        (s, next): (usize, usize),
        alpha: f64,
        omega: Option<f64>,
    ) -> Result<f64> {
        let (delta, g) = td_direction(&self.model, task, s, next)?;
        self.last_delta = delta;
        self.apply(&g, alpha, omega)?;
        Ok(delta)
    }

    /// `θ ← Proj(θ + α ḡ(θ))`, the deterministic expected update.
    pub fn step_mean_path(&mut self, task: &EvalTask, alpha: f64, omega: Option<f64>) -> Result<()> {
        let g = mean_path_g(&self.model, task)?;
        self.apply(&g, alpha, omega)
    }
}

/// `Σ_s w(s) ∇V(s)` from precomputed per-state gradients.
fn pull_back(grads: &[DVector<f64>], weights: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(grads.first().map_or(0, |g| g.len()));
    for (g, &w) in grads.iter().zip(weights.iter()) {
        if w != 0.0 {
            out.axpy(w, g, 1.0);
        }
    }
    out
}

fn values_and_grads<M: ValueModel>(model: &M, task: &EvalTask) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    let mut values = DVector::zeros(task.n());
    let mut grads = Vec::with_capacity(task.n());
    for (i, s) in task.states.iter().enumerate() {
        let (v, g) = model.value_and_grad(s)?;
        values[i] = v;
        grads.push(g);
    }
    Ok((values, grads))
}

/// `ḡ(θ) = E_{s∼μ, s'∼P(s,·)}[∇V(s) δ]` in two ways: as the expectation, and as
/// `∇V(θ)ᵀD(γP − I)(V(θ) − V*)`.
pub fn mean_path_forms<M: ValueModel>(model: &M, task: &EvalTask) -> Result<(DVector<f64>, DVector<f64>)> {
    let (values, grads) = values_and_grads(model, task)?;
    let chain = &task.chain;
    let n = task.n();

    let expected_delta = DVector::from_iterator(
        n,
        (0..n).map(|s| {
            let inner: f64 = (0..n)
                .map(|t| chain.p[(s, t)] * (chain.reward[s] + chain.gamma * values[t] - values[s]))
                .sum();
            chain.mu[s] * inner
        }),
    );
    let form_a = pull_back(&grads, &expected_delta);
    let form_b = pull_back(&grads, &norms::td_operator(&(&values - &chain.v_star), chain)?);
    Ok((form_a, form_b))
}

/// The mean-path direction, after checking that both forms agree.
pub fn mean_path_g<M: ValueModel>(model: &M, task: &EvalTask) -> Result<DVector<f64>> {
    let (form_a, form_b) = mean_path_forms(model, task)?;
    let gap = (&form_a - &form_b).amax();
    if !(gap <= FORM_TOL * (1.0 + form_a.amax())) {
        return Err(Error::FormMismatch(gap));
    }
    Ok(form_a)
}

/// The three parts of the mean-path direction split around a reference point `θ̂*` and an
/// intermediate point `θ_mid` on the segment between `θ` and `θ̂*`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub g_bar: DVector<f64>,
    /// `∇V(θ_mid)ᵀD(γP − I)(V(θ) − V(θ̂*))`
    pub g1: DVector<f64>,
    /// `(∇V(θ) − ∇V(θ_mid))ᵀD(γP − I)(V(θ) − V(θ̂*))`
    pub g2: DVector<f64>,
    /// `∇V(θ)ᵀD(γP − I)(V(θ̂*) − V*)`
    pub g3: DVector<f64>,
    /// `‖ḡ − (g1 + g2 + g3)‖`
    pub residual: f64,
}

pub fn lemma_a4_decomposition<M: ValueModel>(
    model: &M,
    theta_hat_star: &DVector<f64>,
    task: &EvalTask,
    theta_mid: &DVector<f64>,
) -> Result<Decomposition> {
    let chain = &task.chain;
    let star = model.at(theta_hat_star)?;
    let mid = model.at(theta_mid)?;
    let (values, grads) = values_and_grads(model, task)?;
    let (_, mid_grads) = values_and_grads(&mid, task)?;
    let star_values = task.values(&star)?;

    let g_bar = mean_path_g(model, task)?;
    let e = norms::td_operator(&(&values - &star_values), chain)?;
    let g1 = pull_back(&mid_grads, &e);
    let diff_grads: Vec<DVector<f64>> = grads.iter().zip(&mid_grads).map(|(a, b)| a - b).collect();
    let g2 = pull_back(&diff_grads, &e);
    let g3 = pull_back(&grads, &norms::td_operator(&(&star_values - &chain.v_star), chain)?);
    let residual = (&g_bar - (&g1 + &g2 + &g3)).norm();
    Ok(Decomposition {
        g_bar,
        g1,
        g2,
        g3,
        residual,
    })
}

pub const MID_TOL: f64 = 1e-9;
const MID_MAX_ITER: usize = 200;
const MID_GRID: usize = 64;

/// Intermediate point `θ_mid = λθ + (1 − λ)θ̂*` at which
/// `(θ − θ̂*)ᵀ∇V(θ_mid)ᵀ e = (V(θ) − V(θ̂*))ᵀ e` for `e = D(γP − I)(V(θ) − V(θ̂*))`.
#[derive(Clone, Debug)]
pub struct MidPoint {
    pub lambda: f64,
    pub theta_mid: DVector<f64>,
    /// Remaining gap in the defining equation.
    pub gap: f64,
}

/// Locates a mean-value point by a grid scan for a sign change followed by bisection.
pub fn find_theta_mid<M: ValueModel>(model: &M, theta_hat_star: &DVector<f64>, task: &EvalTask) -> Result<MidPoint> {
    let theta = model.theta().clone();
    check_len(theta.len(), theta_hat_star.len())?;
    let star = model.at(theta_hat_star)?;
    let diff_values = task.values(model)? - task.values(&star)?;
    let e = norms::td_operator(&diff_values, &task.chain)?;
    let target = diff_values.dot(&e);
    let direction = &theta - theta_hat_star;

    let point = |lambda: f64| -> DVector<f64> { theta_hat_star + &direction * lambda };
    let phi = |lambda: f64| -> Result<f64> {
        let mid = model.at(&point(lambda))?;
        let mut total = 0.0;
        for (i, s) in task.states.iter().enumerate() {
            if e[i] != 0.0 {
                total += e[i] * mid.grad(s)?.dot(&direction);
            }
        }
        Ok(total - target)
    };

    let mut best = (0.0, phi(0.0)?);
    let mut bracket = None;
    let mut prev = best;
    for i in 1..=MID_GRID {
        let lambda = i as f64 / MID_GRID as f64;
        let val = phi(lambda)?;
        if val.abs() < best.1.abs() {
            best = (lambda, val);
        }
        if prev.1 == 0.0 || prev.1.signum() != val.signum() {
            bracket = Some((prev, (lambda, val)));
            break;
        }
        prev = (lambda, val);
    }
    let scale = 1.0 + target.abs();
    if let Some(((mut lo, mut f_lo), (mut hi, _))) = bracket {
        for _ in 0..MID_MAX_ITER {
            if f_lo == 0.0 || hi - lo <= MID_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let f_mid = phi(mid)?;
            if f_mid.abs() < best.1.abs() {
                best = (mid, f_mid);
            }
            if f_mid.abs() <= MID_TOL * scale * 1e-3 {
                break;
            }
            if f_lo.signum() == f_mid.signum() {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok(MidPoint {
        lambda: best.0,
        theta_mid: point(best.0),
        gap: best.1.abs(),
    })
}

/// Largest squared sampled update next to its a-priori bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UpdateBound {
    pub measured: f64,
    pub bound: f64,
}

/// Bounds `max ‖∇V(s) δ(s, s')‖²` over transitions with `P(s'|s) > 0`.
///
/// With `f = V(θ) − V(θ̂*)` and `e = V(θ̂*) − V*`, the TD error splits into five terms
/// `−f(s) − e(s) + γf(s') + γe(s') + γ(V*(s') − (PV*)(s))`, so
/// `‖g‖² ≤ 5G²[(1 + γ²)(F² + ε²) + γ²(2r_max/(1 − γ))²]` where `G = max ‖∇V‖` and
/// `F = max |f|`. `epsilon` must dominate `max |e|`.
pub fn g_norm_bound_check<M: ValueModel>(
    model: &M,
    theta_hat_star: &DVector<f64>,
    task: &EvalTask,
    epsilon: f64,
) -> Result<UpdateBound> {
    let chain = &task.chain;
    let n = task.n();
    let star = model.at(theta_hat_star)?;
    let (values, grads) = values_and_grads(model, task)?;
    let star_values = task.values(&star)?;

    let actual_eps = (&star_values - &chain.v_star).amax();
    if !(epsilon >= actual_eps * (1.0 - 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon:e} is below the actual approximation error {actual_eps:e}"
        )));
    }
    let grad_sq: Vec<f64> = grads.iter().map(|g| g.norm_squared()).collect();
    let g_max_sq = grad_sq.iter().copied().fold(0.0, f64::max);
    let f_max = (&values - &star_values).amax();
    let gamma = chain.gamma;
    let reward_term = 2.0 * chain.r_max / (1.0 - gamma);
    let bound = 5.0
        * g_max_sq
        * ((1.0 + gamma * gamma) * (f_max * f_max + epsilon * epsilon)
            + gamma * gamma * reward_term * reward_term);

    let mut measured: f64 = 0.0;
    for s in 0..n {
        for t in 0..n {
            if chain.p[(s, t)] > 0.0 {
                let delta = chain.reward[s] + gamma * values[t] - values[s];
                measured = measured.max(grad_sq[s] * delta * delta);
            }
        }
    }
    if !(measured <= bound * (1.0 + 1e-12)) {
        return Err(Error::BoundViolation(format!(
            "max ‖g‖² = {measured:e} exceeds the bound {bound:e}"
        )));
    }
    Ok(UpdateBound { measured, bound })
}

/// Smallest `λ` allowed for `α_t = 1/(λ(t+1))`: `3l⁴(1 + γ²) / (2(1 − γ)σ²)`.
pub fn inverse_time_threshold(sigma_min: f64, lipschitz: f64, gamma: f64) -> Result<f64> {
    if !(sigma_min > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "the weighted smallest singular value must be positive, got {sigma_min:e}"
        )));
    }
    Ok(3.0 * lipschitz.powi(4) * (1.0 + gamma * gamma) / (2.0 * (1.0 - gamma) * sigma_min * sigma_min))
}
