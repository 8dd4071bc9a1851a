//! Value functions over the states of a tabular chain.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::mdp::{induce_chain, Mdp, Policy, PolicyChain};
use crate::net::NetParams;

/// A differentiable parametric value function `V(s, θ)`.
pub trait ValueModel: Clone + Send + Sync {
    fn theta(&self) -> &DVector<f64>;
    fn theta_mut(&mut self) -> &mut DVector<f64>;
    fn value(&self, s: &[f64]) -> Result<f64>;
    fn value_and_grad(&self, s: &[f64]) -> Result<(f64, DVector<f64>)>;

    fn num_params(&self) -> usize {
        self.theta().len()
    }

    fn grad(&self, s: &[f64]) -> Result<DVector<f64>> {
        self.value_and_grad(s).map(|(_, g)| g)
    }

    /// Copy of `self` evaluated at other weights.
    fn at(&self, theta: &DVector<f64>) -> Result<Self> {
        if theta.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: self.num_params(),
                got: theta.len(),
            });
        }
        let mut out = self.clone();
        out.theta_mut().copy_from(theta);
        Ok(out)
    }
}

impl ValueModel for NetParams {
    fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    fn theta_mut(&mut self) -> &mut DVector<f64> {
        &mut self.theta
    }

    fn value(&self, s: &[f64]) -> Result<f64> {
        NetParams::value(self, s)
    }

    fn value_and_grad(&self, s: &[f64]) -> Result<(f64, DVector<f64>)> {
        NetParams::value_and_grad(self, s)
    }
}

/// `V(s, θ) = θᵀs`: the state vector is the feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub theta: DVector<f64>,
}

impl LinearModel {
    pub fn new(theta: DVector<f64>) -> Self {
        LinearModel { theta }
    }

    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            theta: DVector::zeros(dim),
        }
    }
}

impl ValueModel for LinearModel {
    fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    fn theta_mut(&mut self) -> &mut DVector<f64> {
        &mut self.theta
    }

    fn value(&self, s: &[f64]) -> Result<f64> {
        check_len(self.theta.len(), s.len())?;
        Ok(self.theta.iter().zip(s).map(|(a, b)| a * b).sum())
    }

    fn value_and_grad(&self, s: &[f64]) -> Result<(f64, DVector<f64>)> {
        Ok((self.value(s)?, DVector::from_column_slice(s)))
    }
}

/// A policy chain together with the feature vector of each state.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTask {
    pub chain: PolicyChain,
    pub states: Vec<Vec<f64>>,
}

impl EvalTask {
    pub fn new(chain: PolicyChain, states: Vec<Vec<f64>>) -> Result<Self> {
        check_len(chain.n(), states.len())?;
        let d = states.first().map_or(0, Vec::len);
        for s in &states {
            check_len(d, s.len())?;
        }
        Ok(EvalTask { chain, states })
    }

    pub fn from_mdp(mdp: &Mdp, policy: &Policy) -> Result<Self> {
        EvalTask::new(induce_chain(mdp, policy)?, mdp.states.clone())
    }

    /// One-hot states, so that a [`LinearModel`] is a lookup table.
    pub fn tabular(chain: PolicyChain) -> Self {
        let n = chain.n();
        let states = (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect();
        EvalTask { chain, states }
    }

    pub fn n(&self) -> usize {
        self.chain.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// The vector `(V(s, θ))_s`.
    pub fn values<M: ValueModel>(&self, model: &M) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n());
        for (i, s) in self.states.iter().enumerate() {
            out[i] = model.value(s)?;
        }
        Ok(out)
    }

    /// The `n × p` Jacobian with rows `∇_θ V(s, θ)ᵀ`.
    pub fn jacobian<M: ValueModel>(&self, model: &M) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.n(), model.num_params());
        for (i, s) in self.states.iter().enumerate() {
            out.set_row(i, &model.grad(s)?.transpose());
        }
        Ok(out)
    }

    /// Same chain with rewards redefined so that `model` is exactly the true value function.
    pub fn retarget<M: ValueModel>(&self, model: &M) -> Result<EvalTask> {
        let values = self.values(model)?;
        Ok(EvalTask {
            chain: self.chain.with_value_function(&values)?,
            states: self.states.clone(),
        })
    }
}
