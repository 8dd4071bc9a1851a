//! Policy evaluation with temporal-difference learning on tabular Markov chains, for linear
//! and deep fully-connected value functions. All chain quantities (stationary distribution,
//! true value function, mixing profile) are computed exactly so that TD runs can be scored
//! against them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod envs;
pub mod experiments;
pub mod error;
pub mod mdp;
pub mod model;
pub mod net;
pub mod norms;
pub mod probe;
pub mod td;
pub mod verify;

pub use error::{Error, Result};
pub use mdp::{induce_chain, Mdp, Policy, PolicyChain};
pub use model::{EvalTask, LinearModel, ValueModel};
pub use net::{Activation, NetConfig, NetParams, OutputScale};
