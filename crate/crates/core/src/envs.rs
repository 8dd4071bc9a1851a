//! Small synthetic environments with exactly computable analytics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::mdp::Mdp;

/// Uniform mass mixed into every transition row of [`random_mdp`].
pub const RANDOM_MDP_SMOOTHING: f64 = 1e-3;

/// Discount used by the generators; override with [`Mdp::with_gamma`].
pub const DEFAULT_GAMMA: f64 = 0.9;

fn require_states(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!("need at least 2 states, got {n}")));
    }
    Ok(())
}

/// A random dense MDP. Features are random directions with norms in `[0.5, 1]`, transition
/// rows are Dirichlet(1) draws smoothed towards uniform, and rewards are uniform in `[-1, 1]`.
pub fn random_mdp(n: usize, d: usize, actions: usize, seed: u64) -> Result<Mdp> {
    require_states(n)?;
    if d == 0 || actions == 0 {
        return Err(Error::InvalidDimension(format!(
            "feature dimension and action count must be positive (d={d}, actions={actions})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let states = (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let radius = rng.gen_range(0.5..=1.0);
            v.iter_mut().for_each(|x| *x *= radius / norm);
            v
        })
        .collect();

    let kernel = (0..n)
        .map(|_| {
            (0..actions)
                .map(|_| {
                    let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
                    let total: f64 = raw.iter().sum();
                    raw.into_iter().map(|w| w / total).collect()
                })
                .collect()
        })
        .collect();

    let reward = (0..n)
        .map(|_| (0..actions).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();

    let names = (0..actions).map(|a| format!("a{a}")).collect();
    let mdp = Mdp {
        states,
        actions: names,
        kernel,
        reward,
        gamma: DEFAULT_GAMMA,
        r_max: 1.0,
    }
    .smoothed(RANDOM_MDP_SMOOTHING);
    mdp.validate()?;
    Ok(mdp)
}

const MOVES: [(&str, i64, i64); 4] = [("up", 0, -1), ("down", 0, 1), ("left", -1, 0), ("right", 1, 0)];

/// A `width × height` grid. Moves that would leave the grid stay in place; with probability
/// `slip` the intended move is replaced by a uniformly random one. The bottom-right goal pays
/// +1 and teleports back to the top-left start; the top-right cell (when distinct) pays −1.
pub fn gridworld(width: usize, height: usize, slip: f64) -> Result<Mdp> {
    require_states(width * height)?;
    if !(0.0..=1.0).contains(&slip) {
        return Err(Error::InvalidArgument(format!("slip must lie in [0,1], got {slip}")));
    }
    let n = width * height;
    let index = |x: usize, y: usize| y * width + x;
    let start = index(0, 0);
    let goal = index(width - 1, height - 1);
    let trap = index(width - 1, 0);

    let coord = |v: usize, extent: usize| {
        if extent > 1 {
            2.0 * v as f64 / (extent - 1) as f64 - 1.0
        } else {
            0.0
        }
    };
    let scale = 1.0 / 3f64.sqrt();
    let mut states = Vec::with_capacity(n);
    for y in 0..height {
        for x in 0..width {
            states.push(vec![coord(x, width) * scale, coord(y, height) * scale, scale]);
        }
    }

    let step = |s: usize, dx: i64, dy: i64| {
        let (x, y) = ((s % width) as i64, (s / width) as i64);
        let nx = (x + dx).clamp(0, width as i64 - 1) as usize;
        let ny = (y + dy).clamp(0, height as i64 - 1) as usize;
        index(nx, ny)
    };

    let mut kernel = vec![vec![vec![0.0; n]; MOVES.len()]; n];
    let mut reward = vec![vec![0.0; MOVES.len()]; n];
    for s in 0..n {
        for (a, &(_, dx, dy)) in MOVES.iter().enumerate() {
            let row = &mut kernel[s][a];
            if s == goal {
                row[start] = 1.0;
                reward[s][a] = 1.0;
                continue;
            }
            row[step(s, dx, dy)] += 1.0 - slip;
            for &(_, ox, oy) in &MOVES {
                row[step(s, ox, oy)] += slip / MOVES.len() as f64;
            }
            if s == trap && trap != start {
                reward[s][a] = -1.0;
            }
        }
    }

    Mdp::new(
        states,
        MOVES.iter().map(|m| m.0.to_string()).collect(),
        kernel,
        reward,
        DEFAULT_GAMMA,
        1.0,
    )
}

/// A ring of `n` states. From state `i` the single action advances to `i+1` with probability
/// `p_forward` and otherwise resets to state 0; the last state always wraps to 0 and pays +1.
/// With `p_forward = 1` the chain is periodic; [`Mdp::smoothed`] restores ergodicity.
pub fn chain_env(n: usize, p_forward: f64) -> Result<Mdp> {
    require_states(n)?;
    if !(0.0..=1.0).contains(&p_forward) {
        return Err(Error::InvalidArgument(format!(
            "p_forward must lie in [0,1], got {p_forward}"
        )));
    }
    let states = (0..n)
        .map(|i| {
            let angle = std::f64::consts::TAU * i as f64 / n as f64;
            vec![angle.cos(), angle.sin()]
        })
        .collect();
    let kernel = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n];
            if i + 1 == n {
                row[0] = 1.0;
            } else {
                row[i + 1] += p_forward;
                row[0] += 1.0 - p_forward;
            }
            vec![row]
        })
        .collect();
    let reward = (0..n).map(|i| vec![if i + 1 == n { 1.0 } else { 0.0 }]).collect();
    Mdp::new(states, vec!["advance".into()], kernel, reward, DEFAULT_GAMMA, 1.0)
}

/// Two states with features `+1` and `−1` (in one dimension) that swap with probability
/// `flip` and pay nothing. Used with retargeted rewards.
pub fn symmetric_pair(flip: f64) -> Result<Mdp> {
    if !(0.0..1.0).contains(&flip) {
        return Err(Error::InvalidArgument(format!("flip must lie in [0,1), got {flip}")));
    }
    Mdp::new(
        vec![vec![1.0], vec![-1.0]],
        vec!["stay".into()],
        vec![vec![vec![1.0 - flip, flip]], vec![vec![flip, 1.0 - flip]]],
        vec![vec![0.0], vec![0.0]],
        DEFAULT_GAMMA,
        1.0,
    )
}
