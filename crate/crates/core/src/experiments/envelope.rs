//! Envelopes for nonnegative sequences with `X_{t+1} ≤ (1 − c/(t+1)) X_t + b/(t+1)²`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

const DOMINATION_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RecursionBoundChecker {
    pub b: f64,
    pub c: f64,
    pub x0: f64,
}

impl RecursionBoundChecker {
    pub fn new(b: f64, c: f64, x0: f64) -> Result<Self> {
        if !(b >= 0.0 && c > 0.0 && x0 >= 0.0) || !(b.is_finite() && c.is_finite() && x0.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need b ≥ 0, c > 0, X0 ≥ 0; got b = {b}, c = {c}, X0 = {x0}"
            )));
        }
        Ok(Self { b, c, x0 })
    }

    fn factor(&self, t: usize) -> f64 {
        (1.0 - self.c / (t + 1) as f64).max(0.0)
    }

    /// `E_0 = X0`, `E_{t+1} = max(0, 1 − c/(t+1)) E_t + b/(t+1)²` for `t < t_max`.
    ///
    /// Any nonnegative sequence obeying the recursion stays below this, term by term.
    pub fn envelope(&self, t_max: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(t_max + 1);
        let mut e = self.x0;
        out.push(e);
        for t in 0..t_max {
            e = self.factor(t) * e + self.b / ((t + 1) as f64).powi(2);
            out.push(e);
        }
        out
    }

    /// Three-term closed form: the last step, the accumulated middle steps and the decayed
    /// start. Looser than [`Self::envelope`] but explicit in `t`.
    pub fn closed_form(&self, t: usize) -> f64 {
        if t == 0 {
            return self.x0;
        }
        let (b, c) = (self.b, self.c);
        let tf = t as f64;
        let last = b / (tf * tf);
        let scale = 4.0 * b / (tf + 1.0).powf(c);
        let middle = if (c - 1.0).abs() < 1e-12 {
            scale * (1.0 + (tf + 1.0).ln() - 2f64.ln())
        } else {
            scale * (1.0 + ((tf + 1.0).powf(c - 1.0) - 2f64.powf(c - 1.0)) / (c - 1.0))
        };
        // the first factor vanishes for c ≥ 1
        let start = if c < 1.0 { self.x0 / (tf + 1.0).powf(c) } else { 0.0 };
        last + middle + start
    }

    /// A sequence obeying the recursion: each step keeps a `u ∈ [lo, 1]` fraction of the
    /// right-hand side. `lo = 1` gives the recursion with equality wherever that stays
    /// nonnegative.
    pub fn simulate(&self, t_max: usize, lo: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(t_max + 1);
        let mut x = self.x0 * if lo < 1.0 { rng.gen_range(lo..=1.0) } else { 1.0 };
        out.push(x);
        for t in 0..t_max {
            let rhs = ((1.0 - self.c / (t + 1) as f64) * x + self.b / ((t + 1) as f64).powi(2)).max(0.0);
            let u = if lo < 1.0 { rng.gen_range(lo..=1.0) } else { 1.0 };
            x = u * rhs;
            out.push(x);
        }
        out
    }

    /// True when `seq` lies below the envelope at every index and the envelope is smaller at
    /// the end than half-way (or is identically zero).
    pub fn check(&self, seq: &[f64]) -> bool {
        if seq.is_empty() {
            return true;
        }
        let env = self.envelope(seq.len() - 1);
        let dominated = seq
            .iter()
            .zip(&env)
            .all(|(x, e)| *x >= 0.0 && *x <= e + DOMINATION_SLACK * (1.0 + e));
        let last = env[env.len() - 1];
        let mid = env[(env.len() - 1) / 2];
        let decreasing = last == 0.0 || env.len() < 3 || last < mid;
        dominated && decreasing
    }
}
