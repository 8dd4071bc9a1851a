use nalgebra::{DMatrix, DVector};
use neural_td::envs::{random_mdp, symmetric_pair};
use neural_td::experiments::{appendix_b, TdRunConfig};
use neural_td::net::{finite_difference_grad, init, param_norm, NetConfig, OutputScale};
use neural_td::norms::{d_norm_sq, n_value};
use neural_td::probe::regularity_probe;
use neural_td::td::{
    g_norm_bound_check, lemma_a4_decomposition, mean_path_g, td_direction, td_error, SamplingMode, Sampler, StepSize,
    TdState,
};
use neural_td::{induce_chain, Activation, EvalTask, LinearModel, NetParams, Policy, PolicyChain, ValueModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_task(n: usize, d: usize, seed: u64) -> EvalTask {
    let mdp = random_mdp(n, d, 2, seed).unwrap();
    EvalTask::from_mdp(&mdp, &Policy::uniform(n, 2)).unwrap()
}

fn net(depth: usize, width: usize, d: usize, act: Activation, seed: u64) -> NetParams {
    init(&NetConfig::new(depth, width, d, act, seed).with_output_scale(OutputScale::Unit)).unwrap()
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for seed in 0..50 {
        for depth in 1..=3 {
            for width in [4, 16] {
                let act = [Activation::Tanh, Activation::Sigmoid, Activation::Softplus][seed as usize % 3];
                let mut p = net(depth, width, 3, act, seed);
                p.theta.iter_mut().for_each(|x| *x += 0.3 * rng.gen_range(-1.0..1.0));
                let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.6..0.6)).collect();
                let exact = p.grad(&s).unwrap();
                let fd = finite_difference_grad(&p, &s, 1e-5).unwrap();
                worst = worst.max((&exact - &fd).norm() / exact.norm().max(1e-8));
            }
        }
    }
    assert!(worst <= 1e-6, "max relative error {worst:e}");
}

/// Forward pass of a network with explicit biases, written out directly. Unit `m − 1` of
/// every layer carries the constant that the augmented input feeds in.
fn explicit_bias_value(p: &NetParams, s: &[f64]) -> f64 {
    let cfg = p.config;
    let m = cfg.width;
    let scale = 1.0 / (m as f64).sqrt();
    let act = cfg.activation;
    let d = cfg.input_dim - 1;
    let mut x: Vec<f64> = s.to_vec();
    let mut constant = 1.0;
    for k in 0..cfg.depth {
        let w = p.layer(k);
        let inputs = if k == 0 { d } else { m - 1 };
        let mut next = vec![0.0; m - 1];
        for (r, out) in next.iter_mut().enumerate() {
            let weights: f64 = (0..inputs).map(|c| w[(r, c)] * x[c]).sum();
            let bias = w[(r, inputs)] * constant;
            *out = act.eval(weights + bias) * scale;
        }
        constant = act.eval(constant) * scale;
        x = next;
    }
    let hidden: f64 = (0..m - 1).map(|r| p.b[r] * x[r]).sum();
    cfg.output_factor() * (hidden + p.b[m - 1] * constant)
}

#[test]
fn bias_trick_reproduces_explicit_biases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..20 {
        let depth = 1 + seed as usize % 3;
        let width = 6;
        let d = 3;
        let mut p = init(&NetConfig::new(depth, width, d + 1, Activation::ALL[seed as usize % 4], seed)).unwrap();
        // The last row of every layer reads only the constant channel.
        for k in 0..depth {
            let (_, cols) = p.config.layer_shape(k);
            let start = p.config.layer_range(k).start + (width - 1) * cols;
            for c in 0..cols {
                p.theta[start + c] = if c + 1 == cols { 1.0 } else { 0.0 };
            }
        }
        for _ in 0..10 {
            let s: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut augmented = s.clone();
            augmented.push(1.0);
            let a = p.value(&augmented).unwrap();
            let b = explicit_bias_value(&p, &s);
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn flattened_norm_equals_layer_sums() {
    let p = net(3, 7, 4, Activation::Tanh, 3);
    let per_layer: f64 = p.layer_norms_sq().iter().sum::<f64>().sqrt();
    assert!((param_norm(&p.theta) - per_layer).abs() <= 1e-12 * per_layer);
}

#[test]
fn identical_seeds_give_identical_networks() {
    let a = net(2, 16, 3, Activation::Softplus, 9);
    let b = net(2, 16, 3, Activation::Softplus, 9);
    assert_eq!(a, b);
    let s = [0.1, -0.2, 0.3];
    assert_eq!(a.value(&s).unwrap().to_bits(), b.value(&s).unwrap().to_bits());
    assert_eq!(a.grad(&s).unwrap(), b.grad(&s).unwrap());
}

#[test]
fn one_layer_width_100_smoothness() {
    let cfg = NetConfig::new(1, 100, 3, Activation::Tanh, 4);
    let rows = regularity_probe(&cfg, &[100], 1.0, 2_000, 4).unwrap();
    assert!(rows[0].lipschitz_est <= 1.0);
    assert!(rows[0].smoothness_est <= Activation::Tanh.smoothness() / 10.0);
}

#[test]
fn td_error_has_zero_conditional_mean_at_the_true_values() {
    let task = EvalTask::tabular(random_task(6, 2, 3).chain);
    let model = LinearModel::new(task.chain.v_star.clone());
    for s in 0..task.n() {
        let mean: f64 = (0..task.n())
            .map(|t| task.chain.p[(s, t)] * td_error(&model, &task, s, t).unwrap())
            .sum();
        assert!(mean.abs() < 1e-12);
    }
}

#[test]
fn single_step_matches_hand_composition() {
    let task = random_task(5, 3, 4);
    let start = net(2, 8, 3, Activation::Tanh, 5);
    let (s, next) = (1, 3);
    let alpha = 0.07;
    let v = start.value(&task.states[s]).unwrap();
    let v_next = start.value(&task.states[next]).unwrap();
    let delta = task.chain.reward[s] + task.chain.gamma * v_next - v;
    let expected = &start.theta + start.grad(&task.states[s]).unwrap() * (alpha * delta);

    let mut state = TdState::new(start);
    state.step_projected(&task, (s, next), alpha, 1e9).unwrap();
    assert!((state.model.theta() - expected).amax() <= 1e-12);
}

#[test]
fn mean_path_fixed_point_does_not_move() {
    let task = random_task(5, 3, 6);
    let p = net(2, 8, 3, Activation::Tanh, 7);
    let task = task.retarget(&p).unwrap();
    assert!(mean_path_g(&p, &task).unwrap().amax() < 1e-12);
    let mut state = TdState::new(p.clone());
    state.step_mean_path(&task, 0.5, Some(1.0)).unwrap();
    assert!((state.model.theta() - p.theta()).amax() < 1e-12);
}

#[test]
fn tabular_mean_path_converges_monotonically() {
    let task = EvalTask::tabular(random_task(6, 2, 8).chain);
    let mut state = TdState::new(LinearModel::zeros(6));
    let error = |m: &LinearModel| n_value(&(&m.theta - &task.chain.v_star), &task.chain).unwrap();
    let mut prev = error(&state.model);
    for _ in 0..20_000 {
        state.step_mean_path(&task, 0.5, None).unwrap();
        let now = error(&state.model);
        assert!(now <= prev * (1.0 + 1e-12));
        prev = now;
    }
    assert!((&state.model.theta - &task.chain.v_star).amax() < 1e-8);
}

#[test]
fn tabular_sampled_td_shrinks_the_error() {
    let task = EvalTask::tabular(random_task(5, 2, 10).chain);
    let mut state = TdState::new(LinearModel::zeros(5));
    let d_error = |m: &LinearModel| d_norm_sq(&(&m.theta - &task.chain.v_star), &task.chain).unwrap();
    let initial = d_error(&state.model);
    let mut sampler = Sampler::new(&task.chain, SamplingMode::Iid, 11).unwrap();
    for _ in 0..100_000 {
        state.step_unprojected(&task, sampler.next_transition(), 0.01).unwrap();
    }
    let last = d_error(&state.model);
    assert!(last < initial / 100.0, "{last} vs {initial}");
}

#[test]
fn inverse_time_schedule_is_exact() {
    let rule = StepSize::InverseTime { lambda: 3.0 };
    for t in [0, 1, 9, 99_999] {
        assert_eq!(rule.at(t), 1.0 / (3.0 * (t as f64 + 1.0)));
    }
}

fn frequencies(chain: &PolicyChain, mode: SamplingMode, draws: usize) -> (Vec<f64>, Vec<f64>) {
    let n = chain.n();
    let batches = 1_000;
    let per = draws / batches;
    let mut sampler = Sampler::new(chain, mode, 5).unwrap();
    let mut batch_means = vec![vec![0.0; batches]; n];
    let mut pairs = vec![0.0; n * n];
    for b in 0..batches {
        for _ in 0..per {
            let (s, t) = sampler.next_transition();
            let row: &mut Vec<f64> = &mut batch_means[s];
            row[b] += 1.0 / per as f64;
            pairs[s * n + t] += 1.0 / draws as f64;
        }
    }
    let mean: Vec<f64> = batch_means.iter().map(|v| v.iter().sum::<f64>() / batches as f64).collect();
    let se: Vec<f64> = batch_means
        .iter()
        .zip(&mean)
        .map(|(v, m)| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64 / batches as f64).sqrt())
        .collect();
    let mut pair_z = Vec::new();
    for s in 0..n {
        for t in 0..n {
            let target = chain.mu[s] * chain.p[(s, t)];
            let sd = (target * (1.0 - target) / draws as f64).sqrt();
            if mode == SamplingMode::Iid && sd > 0.0 {
                pair_z.push((pairs[s * n + t] - target).abs() / sd);
            }
        }
    }
    let z = mean.iter().zip(&se).zip(chain.mu.iter()).map(|((m, e), mu)| (m - mu).abs() / e).collect();
    (z, pair_z)
}

#[test]
fn sampler_marginals_match_the_stationary_distribution() {
    let chain = random_task(4, 2, 12).chain;
    for mode in [SamplingMode::Iid, SamplingMode::Markov] {
        let (z, pair_z) = frequencies(&chain, mode, 1_000_000);
        assert!(z.iter().all(|&v| v < 4.0), "{mode:?}: {z:?}");
        assert!(pair_z.iter().all(|&v| v < 4.0), "{mode:?}: {pair_z:?}");
    }
}

#[test]
fn decomposition_at_the_segment_ends() {
    let d = 3;
    let task = random_task(6, d, 13);
    let base = net(2, 6, d, Activation::Sigmoid, 14);
    let star = base.theta() + DVector::from_element(base.num_params(), 0.05);
    let model = base.at(&(base.theta() - DVector::from_element(base.num_params(), 0.05))).unwrap();

    let at_theta = lemma_a4_decomposition(&model, &star, &task, model.theta()).unwrap();
    assert_eq!(at_theta.g2.amax(), 0.0);
    assert!(at_theta.residual <= 1e-9 * (1.0 + at_theta.g_bar.norm()));

    let at_star = lemma_a4_decomposition(&model, &star, &task, &star).unwrap();
    assert!(at_star.residual <= 1e-9 * (1.0 + at_star.g_bar.norm()));
}

#[test]
fn update_bound_special_cases() {
    // With γ close to 0, V ≡ 0 and r ≡ 1 every δ is 1, so ‖g‖² = ‖∇V‖².
    let states: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
    let p = DMatrix::from_element(3, 3, 1.0 / 3.0);
    let chain = PolicyChain::from_parts(p, DVector::from_element(3, 1.0), 1e-9, 1.0).unwrap();
    let task = EvalTask::new(chain, states).unwrap();
    let mut zero = net(1, 4, 2, Activation::Tanh, 15);
    zero.b.fill(0.0);
    let star = zero.theta().clone();
    let eps = task.chain.v_star.amax();
    let bound = g_norm_bound_check(&zero, &star, &task, eps).unwrap();
    let max_grad_sq = task
        .states
        .iter()
        .map(|s| zero.grad(s).unwrap().norm_squared())
        .fold(0.0, f64::max);
    assert!((bound.measured - max_grad_sq).abs() <= 1e-9 * (1.0 + max_grad_sq));

    // At the representable target only the reward-variation term survives.
    let task = random_task(5, 2, 16);
    let p = net(1, 8, 2, Activation::Tanh, 17);
    let task = task.retarget(&p).unwrap();
    let b = g_norm_bound_check(&p, p.theta(), &task, 0.0).unwrap();
    let chain = &task.chain;
    let g_sq = task.states.iter().map(|s| p.grad(s).unwrap().norm_squared()).fold(0.0, f64::max);
    let reward_only = 5.0 * g_sq * (chain.gamma * 2.0 * chain.r_max / (1.0 - chain.gamma)).powi(2);
    assert!((b.bound - reward_only).abs() <= 1e-12 * reward_only);
    assert!(b.measured <= b.bound);
}

#[test]
fn sampled_direction_is_gradient_times_error() {
    let task = random_task(4, 2, 18);
    let p = net(2, 5, 2, Activation::Tanh, 19);
    let (delta, g) = td_direction(&p, &task, 2, 0).unwrap();
    assert_eq!(delta, td_error(&p, &task, 2, 0).unwrap());
    assert!((g - p.grad(&task.states[2]).unwrap() * delta).amax() < 1e-15);
}

#[test]
fn unprojected_distance_falls_after_burn_in() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/appendix_b.toml");
    let cfg = TdRunConfig::load(&path).unwrap();
    let report = appendix_b(&cfg, 20, None).unwrap();
    let curve = &report.mean_curve;
    let after_burn_in = curve[curve.len() / 10].1;
    let last = curve.last().unwrap().1;
    assert!(last < after_burn_in, "{after_burn_in} -> {last}");
    let tail: Vec<f64> = curve[curve.len() / 10..].iter().map(|p| p.1).collect();
    let rises = tail.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises * 5 < tail.len(), "{rises} rises in {} points", tail.len());
}

#[test]
fn pair_chain_feeds_the_inverse_time_run() {
    let mdp = symmetric_pair(0.95).unwrap().with_gamma(0.05).unwrap();
    let chain = induce_chain(&mdp, &Policy::uniform(2, 1)).unwrap();
    assert!((chain.mu[0] - 0.5).abs() < 1e-12);
}
