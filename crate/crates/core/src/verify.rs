//! Randomized checks of the algebraic identities the algorithms rely on. Each suite draws
//! its instances from a fixed seed, so a report is a pure function of its options.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::envs::random_mdp;
use crate::error::{Error, Result};
use crate::experiments::stream_seed;
use crate::mdp::{induce_chain, Policy, PolicyChain};
use crate::model::{EvalTask, ValueModel};
use crate::net::{finite_difference_grad, init, Activation, NetConfig, NetParams, OutputScale};
use crate::norms::{d_norm_sq, dirichlet_sq, splitting_residual, td_bilinear};
use crate::td::{lemma_a4_decomposition, mean_path_forms};

const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// `fᵀD(γP − I)f = −𝒩(f)`
    QuadraticIdentity,
    /// Linear TD: `(θ − θ*)ᵀḡ(θ) = −𝒩(Φ(θ − θ*))`
    GradientSplitting,
    /// Mean-path direction equals the sum of its three parts around a target and a midpoint.
    MeanPathDecomposition,
    /// Expectation form and operator form of the mean-path direction agree.
    MeanPathDualForm,
    /// Reverse-mode gradient against central finite differences.
    GradientFiniteDifference,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::QuadraticIdentity,
        Suite::GradientSplitting,
        Suite::MeanPathDecomposition,
        Suite::MeanPathDualForm,
        Suite::GradientFiniteDifference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::QuadraticIdentity => "quadratic_identity",
            Suite::GradientSplitting => "gradient_splitting",
            Suite::MeanPathDecomposition => "mean_path_decomposition",
            Suite::MeanPathDualForm => "mean_path_dual_form",
            Suite::GradientFiniteDifference => "gradient_finite_difference",
        }
    }

    /// Bound on the normalized gap of one instance.
    pub fn default_tolerance(self) -> f64 {
        match self {
            Suite::QuadraticIdentity => 1e-10,
            Suite::GradientSplitting => 1e-8,
            Suite::MeanPathDecomposition => 1e-9,
            Suite::MeanPathDualForm => 1e-10,
            Suite::GradientFiniteDifference => 1e-6,
        }
    }

    /// Normalized gap of instance `seed`.
    pub fn gap(self, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Suite::QuadraticIdentity => quadratic_gap(&mut rng),
            Suite::GradientSplitting => splitting_gap(&mut rng),
            Suite::MeanPathDecomposition => decomposition_gap(&mut rng),
            Suite::MeanPathDualForm => dual_form_gap(&mut rng),
            Suite::GradientFiniteDifference => finite_difference_gap(&mut rng),
        }
    }

    fn stream(self) -> u64 {
        Suite::ALL.iter().position(|s| *s == self).unwrap() as u64 + 100
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    /// Instances per suite.
    pub instances: usize,
    pub seed: u64,
    /// Replaces every suite's default tolerance.
    pub tolerance: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 0,
            tolerance: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: Suite,
    pub instances: usize,
    pub max_gap: f64,
    pub tolerance: f64,
    pub failures: usize,
    /// Seed of the first instance over tolerance.
    pub first_failure: Option<u64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub instances: usize,
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
    pub pass: bool,
}

impl IdentityReport {
    pub fn first_failure(&self) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| !s.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            out.push_str(&format!(
                "{:<28} {}  max_gap={:.3e}  tol={:.1e}  instances={}\n",
                s.suite.name(),
                if s.pass { "pass" } else { "FAIL" },
                s.max_gap,
                s.tolerance,
                s.instances
            ));
        }
        out
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteResult> {
    let tolerance = opts.tolerance.unwrap_or(suite.default_tolerance());
    let mut max_gap: f64 = 0.0;
    let mut failures = 0;
    let mut first_failure = None;
    for i in 0..opts.instances {
        let seed = stream_seed(opts.seed.wrapping_add(i as u64), suite.stream());
        let gap = suite.gap(seed)?;
        max_gap = max_gap.max(gap);
        if !(gap <= tolerance) {
            failures += 1;
            first_failure.get_or_insert(seed);
        }
    }
    Ok(SuiteResult {
        suite,
        instances: opts.instances,
        max_gap,
        tolerance,
        failures,
        first_failure,
        pass: failures == 0,
    })
}

pub fn verify_identities(opts: &VerifyOptions) -> Result<IdentityReport> {
    if opts.instances == 0 {
        return Err(Error::InvalidArgument("need at least one instance per suite".into()));
    }
    if let Some(t) = opts.tolerance {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {t}")));
        }
    }
    let suites = Suite::ALL
        .iter()
        .map(|&s| run_suite(s, opts))
        .collect::<Result<Vec<_>>>()?;
    let pass = suites.iter().all(|s| s.pass);
    Ok(IdentityReport {
        instances: opts.instances,
        seed: opts.seed,
        suites,
        pass,
    })
}

fn gaussian_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn random_chain(rng: &mut ChaCha8Rng, max_n: usize, d: usize) -> Result<(PolicyChain, Vec<Vec<f64>>)> {
    let n = rng.gen_range(2..=max_n);
    let actions = rng.gen_range(1..=3);
    let gamma = rng.gen_range(0.05..0.99);
    let mdp = random_mdp(n, d, actions, rng.gen())?.with_gamma(gamma)?;
    let chain = induce_chain(&mdp, &Policy::uniform(n, actions))?;
    Ok((chain, mdp.states))
}

fn quadratic_gap(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (chain, _) = random_chain(rng, 30, 1)?;
    let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
    let f = gaussian_vector(chain.n(), rng) * scale;
    let n_val = (1.0 - chain.gamma) * d_norm_sq(&f, &chain)? + chain.gamma * dirichlet_sq(&f, &chain)?;
    Ok((td_bilinear(&f, &f, &chain)? + n_val).abs() / (1.0 + n_val))
}

fn splitting_gap(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (chain, _) = random_chain(rng, 30, 1)?;
    let n = chain.n();
    let d = rng.gen_range(1..=n);
    let features = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt());
    let theta_star = gaussian_vector(d, rng);
    let chain = chain.with_value_function(&(&features * &theta_star))?;
    let theta = gaussian_vector(d, rng);
    let f = &features * (&theta - &theta_star);
    let n_val = (1.0 - chain.gamma) * d_norm_sq(&f, &chain)? + chain.gamma * dirichlet_sq(&f, &chain)?;
    Ok(splitting_residual(&theta, &theta_star, &features, &chain)? / (1.0 + n_val))
}

fn random_net(rng: &mut ChaCha8Rng, max_depth: usize, max_width: usize, input_dim: usize) -> Result<NetParams> {
    let act = Activation::ALL[rng.gen_range(0..Activation::ALL.len())];
    let scale = if rng.gen_bool(0.5) {
        OutputScale::Unit
    } else {
        OutputScale::InvSqrtWidth
    };
    let cfg = NetConfig::new(
        rng.gen_range(1..=max_depth),
        rng.gen_range(1..=max_width),
        input_dim,
        act,
        rng.gen(),
    )
    .with_output_scale(scale);
    init(&cfg)
}

fn ball_point(center: &DVector<f64>, radius: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let u = gaussian_vector(center.len(), rng);
    let r = radius * rng.gen::<f64>();
    center + u.normalize() * r
}

fn decomposition_gap(rng: &mut ChaCha8Rng) -> Result<f64> {
    let d = rng.gen_range(1..=4);
    let (chain, states) = random_chain(rng, 12, d)?;
    let net = random_net(rng, 2, 16, d)?;
    let omega = rng.gen_range(0.1..3.0);
    let star_theta = ball_point(net.theta(), omega, rng);
    let mut task = EvalTask::new(chain, states)?;
    if rng.gen_bool(0.5) {
        task = task.retarget(&net.at(&star_theta)?)?;
    }
    let model = net.at(&ball_point(net.theta(), omega, rng))?;
    let lambda = [0.25, 0.5, 0.75][rng.gen_range(0..3)];
    let mid = &star_theta + (model.theta() - &star_theta) * lambda;
    let dec = lemma_a4_decomposition(&model, &star_theta, &task, &mid)?;
    Ok(dec.residual / (1.0 + dec.g_bar.norm()))
}

fn dual_form_gap(rng: &mut ChaCha8Rng) -> Result<f64> {
    let d = rng.gen_range(1..=4);
    let (chain, states) = random_chain(rng, 12, d)?;
    let task = EvalTask::new(chain, states)?;
    let net = random_net(rng, 2, 16, d)?;
    let model = net.at(&ball_point(net.theta(), 2.0, rng))?;
    let (a, b) = mean_path_forms(&model, &task)?;
    Ok((&a - &b).amax() / (1.0 + a.amax()))
}

fn finite_difference_gap(rng: &mut ChaCha8Rng) -> Result<f64> {
    let d = rng.gen_range(1..=4);
    let net = random_net(rng, 3, 32, d)?;
    let s = gaussian_vector(d, rng);
    let s = s.normalize() * rng.gen_range(0.3..=1.0);
    let exact = net.grad(s.as_slice())?;
    let fd = finite_difference_grad(&net, s.as_slice(), FD_STEP)?;
    Ok((&exact - &fd).norm() / exact.norm().max(1e-8))
}
