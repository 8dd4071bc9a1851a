//! Finite MDPs, fixed policies, and the exact analytics of the chain a policy induces.
//!
//! Everything here is dense and exact: the state spaces this workbench targets are small
//! enough (n ≤ a few hundred) that the stationary distribution and the true value function
//! are obtained by direct linear solves rather than by simulation.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;
const POWER_ITER_TOL: f64 = 1e-12;
const POWER_ITER_CAP: usize = 1_000_000;

/// A finite discounted MDP whose states are feature vectors.
///
/// `kernel[s][a][s']` is the probability of moving to `s'` after taking `a` in `s`, and
/// `reward[s][a]` the immediate reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<String>,
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
    pub r_max: f64,
}

impl Mdp {
    /// Builds an MDP and checks every structural invariant.
    pub fn new(
        states: Vec<Vec<f64>>,
        actions: Vec<String>,
        kernel: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        let mdp = Mdp {
            states,
            actions,
            kernel,
            reward,
            gamma,
            r_max,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    /// Dimension of the state feature vectors.
    pub fn feature_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_states();
        let a = self.num_actions();
        if n == 0 {
            return Err(Error::InvalidMdp("no states".into()));
        }
        if a == 0 {
            return Err(Error::InvalidMdp("no actions".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidMdp(format!(
                "gamma must lie strictly inside (0,1), got {}",
                self.gamma
            )));
        }
        if !(self.r_max.is_finite() && self.r_max > 0.0) {
            return Err(Error::InvalidMdp(format!("r_max must be positive, got {}", self.r_max)));
        }
        let d = self.feature_dim();
        if d == 0 {
            return Err(Error::InvalidMdp("state features are empty".into()));
        }
        for (i, s) in self.states.iter().enumerate() {
            if s.len() != d {
                return Err(Error::InvalidMdp(format!(
                    "state {i} has dimension {} but state 0 has {d}",
                    s.len()
                )));
            }
            let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || norm > 1.0 + 1e-12 {
                return Err(Error::InvalidMdp(format!("state {i} has norm {norm} > 1")));
            }
        }
        if self.kernel.len() != n || self.reward.len() != n {
            return Err(Error::InvalidMdp(format!(
                "kernel/reward must have {n} rows (got {} and {})",
                self.kernel.len(),
                self.reward.len()
            )));
        }
        for s in 0..n {
            if self.kernel[s].len() != a || self.reward[s].len() != a {
                return Err(Error::InvalidMdp(format!("state {s}: expected {a} actions")));
            }
            for act in 0..a {
                let row = &self.kernel[s][act];
                if row.len() != n {
                    return Err(Error::InvalidMdp(format!(
                        "P_env(.|{s},{act}) has {} entries, expected {n}",
                        row.len()
                    )));
                }
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidMdp(format!("P_env(.|{s},{act}) has a negative entry")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "P_env(.|{s},{act}) sums to {sum}"
                    )));
                }
                let r = self.reward[s][act];
                if !r.is_finite() || r.abs() > self.r_max {
                    return Err(Error::InvalidMdp(format!(
                        "|r({s},{act})| = {} exceeds r_max = {}",
                        r.abs(),
                        self.r_max
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mixes every transition row with `mass` of the uniform distribution and renormalizes.
    pub fn smoothed(&self, mass: f64) -> Mdp {
        let n = self.num_states();
        let mut out = self.clone();
        for rows in &mut out.kernel {
            for row in rows.iter_mut() {
                for p in row.iter_mut() {
                    *p = (*p + mass / n as f64) / (1.0 + mass);
                }
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
        out
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Mdp> {
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn from_json_str(text: &str) -> Result<Mdp> {
        let mdp: Mdp = serde_json::from_str(text).map_err(|e| Error::InvalidMdp(e.to_string()))?;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn load(path: &Path) -> Result<Mdp> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidMdp(format!("{}: {e}", path.display())))?;
        Mdp::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::persist(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::persist(path, e))
    }
}

/// A stochastic policy `probs[s][a] = π(s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub probs: Vec<Vec<f64>>,
}

impl Policy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in probs.iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidPolicy(format!("row {s} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
        }
        Ok(Policy { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Policy {
            probs: vec![vec![1.0 / num_actions as f64; num_actions]; num_states],
        }
    }
}

/// The Markov chain a fixed policy induces, with its exact analytics.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyChain {
    /// Row-stochastic transition matrix `P(s'|s)`.
    pub p: DMatrix<f64>,
    /// State rewards `R(s) = Σ_a π(s,a) r(s,a)`.
    pub reward: DVector<f64>,
    /// Stationary distribution.
    pub mu: DVector<f64>,
    /// True value function, the solution of `V = R + γPV`.
    pub v_star: DVector<f64>,
    pub gamma: f64,
    pub r_max: f64,
}

/// Folds a policy into an MDP and computes `P`, `R`, `μ` and `V*`.
pub fn induce_chain(mdp: &Mdp, policy: &Policy) -> Result<PolicyChain> {
    mdp.validate()?;
    let n = mdp.num_states();
    let a = mdp.num_actions();
    if policy.probs.len() != n || policy.probs.iter().any(|row| row.len() != a) {
        return Err(Error::InvalidPolicy(format!(
            "policy must be {n}x{a} to match the MDP"
        )));
    }
    Policy::new(policy.probs.clone())?;

    let mut p = DMatrix::zeros(n, n);
    let mut reward = DVector::zeros(n);
    for s in 0..n {
        for act in 0..a {
            let w = policy.probs[s][act];
            if w == 0.0 {
                continue;
            }
            reward[s] += w * mdp.reward[s][act];
            for (next, &q) in mdp.kernel[s][act].iter().enumerate() {
                p[(s, next)] += w * q;
            }
        }
    }
    PolicyChain::from_parts(p, reward, mdp.gamma, mdp.r_max)
}

impl PolicyChain {
    /// Builds a chain directly from `P`, `R` and `γ`.
    pub fn from_parts(p: DMatrix<f64>, reward: DVector<f64>, gamma: f64, r_max: f64) -> Result<Self> {
        let n = p.nrows();
        if p.ncols() != n || reward.len() != n || n == 0 {
            return Err(Error::InvalidDimension(format!(
                "P is {}x{}, R has {} entries",
                p.nrows(),
                p.ncols(),
                reward.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma must lie in (0,1), got {gamma}")));
        }
        for s in 0..n {
            let row = p.row(s);
            if row.iter().any(|&x| !(x >= 0.0)) || (row.sum() - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidMdp(format!("row {s} of P is not a distribution")));
            }
        }
        check_ergodic(&p)?;
        let mu = stationary_distribution(&p)?;
        let v_star = solve_value(&p, &reward, gamma)?;
        Ok(PolicyChain {
            p,
            reward,
            mu,
            v_star,
            gamma,
            r_max,
        })
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    /// Re-targets the chain so that `values` becomes its true value function.
    ///
    /// The rewards are redefined as `R := (I − γP) values`, and `r_max` becomes `max |R|`.
    pub fn with_value_function(&self, values: &DVector<f64>) -> Result<PolicyChain> {
        crate::error::check_len(self.n(), values.len())?;
        let reward = values - self.gamma * (&self.p * values);
        let r_max = reward.amax().max(f64::MIN_POSITIVE);
        Ok(PolicyChain {
            p: self.p.clone(),
            reward,
            mu: self.mu.clone(),
            v_star: values.clone(),
            gamma: self.gamma,
            r_max,
        })
    }

    /// `‖μᵀP − μᵀ‖_∞`
    pub fn stationarity_residual(&self) -> f64 {
        (self.p.tr_mul(&self.mu) - &self.mu).amax()
    }

    /// `‖V* − R − γPV*‖_∞`
    pub fn bellman_residual(&self) -> f64 {
        (&self.v_star - &self.reward - self.gamma * (&self.p * &self.v_star)).amax()
    }

    /// Row `s` of `P` as a plain vector.
    pub fn row(&self, s: usize) -> Vec<f64> {
        self.p.row(s).iter().copied().collect()
    }
}

/// Irreducibility by forward and backward reachability, aperiodicity by the gcd of
/// BFS level differences across every positive edge.
pub fn check_ergodic(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|s| (0..n).filter(|&t| p[(s, t)] > 0.0).collect())
        .collect();
    let radj: Vec<Vec<usize>> = (0..n)
        .map(|t| (0..n).filter(|&s| p[(s, t)] > 0.0).collect())
        .collect();

    let levels = bfs_levels(&adj, 0);
    if let Some(s) = levels.iter().position(Option::is_none) {
        return Err(Error::NonErgodicChain(format!("state {s} is unreachable from state 0")));
    }
    if let Some(s) = bfs_levels(&radj, 0).iter().position(Option::is_none) {
        return Err(Error::NonErgodicChain(format!("state 0 is unreachable from state {s}")));
    }

    let levels: Vec<i64> = levels.into_iter().map(|l| l.unwrap() as i64).collect();
    let mut period = 0i64;
    for (s, next) in adj.iter().enumerate() {
        for &t in next {
            period = gcd(period, (levels[s] + 1 - levels[t]).abs());
        }
    }
    if period != 1 {
        return Err(Error::NonErgodicChain(format!("chain is periodic with period {period}")));
    }
    Ok(())
}

fn bfs_levels(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        let next_level = level[s].unwrap() + 1;
        for &t in &adj[s] {
            if level[t].is_none() {
                level[t] = Some(next_level);
                queue.push_back(t);
            }
        }
    }
    level
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Solves `(Pᵀ − I)μ = 0, Σμ = 1` densely, falling back to power iteration when the
/// direct solve is inaccurate.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;

    let direct = a.lu().solve(&rhs).map(|mut mu| {
        mu.iter_mut().for_each(|x| {
            if *x < 0.0 && *x > -1e-14 {
                *x = 0.0;
            }
        });
        let total = mu.sum();
        mu / total
    });
    if let Some(mu) = direct {
        if mu.iter().all(|&x| x >= 0.0 && x.is_finite())
            && (p.tr_mul(&mu) - &mu).amax() <= STATIONARY_TOL
        {
            return Ok(mu);
        }
    }
    power_iteration(p)
}

fn power_iteration(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let mut mu = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..POWER_ITER_CAP {
        let next = p.tr_mul(&mu);
        let change = (&next - &mu).lp_norm(1);
        mu = next;
        if change < POWER_ITER_TOL {
            let total = mu.sum();
            return Ok(mu / total);
        }
    }
    Err(Error::SingularSystem(
        "stationary distribution did not converge under power iteration".into(),
    ))
}

/// Solves `(I − γP)V = R`.
pub fn solve_value(p: &DMatrix<f64>, reward: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    let n = p.nrows();
    let a = DMatrix::identity(n, n) - gamma * p;
    let v = a
        .lu()
        .solve(reward)
        .ok_or_else(|| Error::SingularSystem("I - γP is singular".into()))?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularSystem("value solve produced non-finite entries".into()));
    }
    Ok(v)
}

/// Mixing behavior of an ergodic chain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingProfile {
    /// Smallest `t` with `max_s ‖Pᵗ(s,·) − μ‖_TV ≤ eps_mix`.
    pub tau_mix: usize,
    /// Geometric fit `max TV ≈ C βᵗ`.
    pub c: f64,
    pub beta: f64,
    /// `max_s ‖Pᵗ(s,·) − μ‖_TV` for `t = 0..=tau_mix`.
    pub max_tv: Vec<f64>,
}

/// Default cap on the number of matrix powers taken by [`mixing_profile`].
pub const DEFAULT_MIXING_CAP: usize = 10_000;

/// Maximum total-variation distance between the rows of `pt` and `mu`.
pub fn max_tv_distance(pt: &DMatrix<f64>, mu: &DVector<f64>) -> f64 {
    (0..pt.nrows())
        .map(|s| 0.5 * pt.row(s).iter().zip(mu.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn mixing_profile(chain: &PolicyChain, eps_mix: f64, cap: usize) -> Result<MixingProfile> {
    if !(eps_mix > 0.0 && eps_mix < 1.0) {
        return Err(Error::InvalidArgument(format!("eps_mix must lie in (0,1), got {eps_mix}")));
    }
    let n = chain.n();
    let mut pt = DMatrix::identity(n, n);
    let mut max_tv = vec![max_tv_distance(&pt, &chain.mu)];
    let mut t = 0;
    while *max_tv.last().unwrap() > eps_mix {
        if t == cap {
            return Err(Error::MixingHorizonExceeded {
                cap,
                tv: *max_tv.last().unwrap(),
                eps: eps_mix,
            });
        }
        pt = &pt * &chain.p;
        t += 1;
        max_tv.push(max_tv_distance(&pt, &chain.mu));
    }
    let (c, beta) = fit_geometric(&max_tv);
    Ok(MixingProfile {
        tau_mix: t,
        c,
        beta,
        max_tv,
    })
}

/// Least-squares fit of `log tv_t = log C + t log β` over the strictly positive entries.
fn fit_geometric(tv: &[f64]) -> (f64, f64) {
    let points: Vec<(f64, f64)> = tv
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 1e-15)
        .map(|(t, &v)| (t as f64, v.ln()))
        .collect();
    let min_beta = 1e-12;
    let max_beta = 1.0 - 1e-12;
    if points.len() < 2 {
        let c = points.first().map_or(1.0, |&(_, lv)| lv.exp());
        return (c.max(f64::MIN_POSITIVE), min_beta);
    }
    let k = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    (intercept.exp(), slope.exp().clamp(min_beta, max_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_action_mdp(kernel: Vec<Vec<f64>>, reward: Vec<f64>, gamma: f64) -> Mdp {
        let n = kernel.len();
        let states = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
        Mdp::new(
            states,
            vec!["stay".into()],
            kernel.into_iter().map(|row| vec![row]).collect(),
            reward.into_iter().map(|r| vec![r]).collect(),
            gamma,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn uniform_two_state_chain() {
        let mdp = single_action_mdp(vec![vec![0.5, 0.5]; 2], vec![1.0, 1.0], 0.5);
        let chain = induce_chain(&mdp, &Policy::uniform(2, 1)).unwrap();
        assert_abs_diff_eq!(chain.mu[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(chain.mu[1], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(chain.v_star[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chain.v_star[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn self_loop_is_geometric_series() {
        let mdp = single_action_mdp(vec![vec![1.0]], vec![1.0], 0.9);
        let chain = induce_chain(&mdp, &Policy::uniform(1, 1)).unwrap();
        assert_abs_diff_eq!(chain.mu[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(chain.v_star[0], 10.0, epsilon = 1e-11);
    }

    #[test]
    fn two_cycle_is_periodic() {
        // μ = (0.5, 0.5) and V* = 0 exist for this chain, but it is rejected as periodic.
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let v = solve_value(&p, &DVector::zeros(2), 0.9).unwrap();
        assert_eq!(v.amax(), 0.0);
        let mu = stationary_distribution(&p).unwrap();
        assert_abs_diff_eq!(mu[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(mu[1], 0.5, epsilon = 1e-14);
        assert!(matches!(check_ergodic(&p), Err(Error::NonErgodicChain(_))));
    }

    #[test]
    fn identity_chain_is_reducible() {
        let p = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            PolicyChain::from_parts(p, DVector::zeros(3), 0.5, 1.0),
            Err(Error::NonErgodicChain(_))
        ));
    }

    #[test]
    fn mixing_of_rank_one_chain_is_immediate() {
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.5, 0.2, 0.3, 0.5, 0.2, 0.3, 0.5]);
        let chain = PolicyChain::from_parts(p, DVector::zeros(3), 0.5, 1.0).unwrap();
        for eps in [0.5, 1e-3, 1e-9] {
            assert_eq!(mixing_profile(&chain, eps, 100).unwrap().tau_mix, 1);
        }
    }

    #[test]
    fn mixing_of_lazy_two_state_chain_matches_brute_force() {
        // Brute force: TV distance of row s of Pᵗ to μ=(½,½) is ½·0.8ᵗ.
        let oracle = (0..).find(|&t| 0.5 * 0.8f64.powi(t) <= 0.01).unwrap() as usize;
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let chain = PolicyChain::from_parts(p, DVector::zeros(2), 0.5, 1.0).unwrap();
        let profile = mixing_profile(&chain, 0.01, 1000).unwrap();
        assert_eq!(oracle, 18);
        assert_eq!(profile.tau_mix, oracle);
        assert_abs_diff_eq!(profile.beta, 0.8, epsilon = 1e-9);
        assert_abs_diff_eq!(profile.c, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn mixing_cap_is_reported() {
        let p = DMatrix::from_row_slice(2, 2, &[0.999, 0.001, 0.001, 0.999]);
        let chain = PolicyChain::from_parts(p, DVector::zeros(2), 0.5, 1.0).unwrap();
        assert!(matches!(
            mixing_profile(&chain, 1e-6, 50),
            Err(Error::MixingHorizonExceeded { cap: 50, .. })
        ));
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let good = single_action_mdp(vec![vec![0.5, 0.5]; 2], vec![1.0, 1.0], 0.5);

        let mut bad = good.clone();
        bad.kernel[0][0] = vec![0.6, 0.6];
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.states[1] = vec![1.5];
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.reward[0][0] = 2.0;
        assert!(bad.validate().is_err());

        assert!(good.clone().with_gamma(1.0).is_err());
        assert!(good.with_gamma(0.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mdp = single_action_mdp(vec![vec![0.25, 0.75], vec![0.5, 0.5]], vec![0.5, -1.0], 0.9);
        let text = serde_json::to_string(&mdp).unwrap();
        assert!(text.contains("\"kernel\"") && text.contains("\"r_max\""));
        assert_eq!(Mdp::from_json_str(&text).unwrap(), mdp);
        let broken = text.replace("0.75", "0.95");
        assert!(Mdp::from_json_str(&broken).is_err());
    }

    #[test]
    fn retargeted_chain_has_requested_value_function() {
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        let chain = PolicyChain::from_parts(p, DVector::from_vec(vec![1.0, 0.0]), 0.8, 1.0).unwrap();
        let target = DVector::from_vec(vec![0.25, -2.0]);
        let retargeted = chain.with_value_function(&target).unwrap();
        assert!(retargeted.bellman_residual() < 1e-14);
        let resolved = solve_value(&retargeted.p, &retargeted.reward, 0.8).unwrap();
        assert!((resolved - target).amax() < 1e-12);
    }
}
