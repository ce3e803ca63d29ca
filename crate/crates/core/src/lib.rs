//! Solver for infinite-horizon, two-agent decentralized POMDPs.
//!
//! Policies are fixed-size stochastic finite-state controllers, one per agent.
//! Planning is cast as likelihood maximization in a mixture of dynamic
//! Bayesian networks and carried out by expectation maximization; exact policy
//! evaluation and Monte-Carlo simulation are provided for auditing the
//! resulting controllers.
//!
//! - [`model`]: problem definition, `.dpomdp` parsing and indexing
//! - [`controller`]: stochastic finite-state controllers
//! - [`evaluation`]: exact evaluation and simulation of a controller pair
//! - [`em`]: the planning-as-inference machinery and the EM driver

pub mod controller;
pub mod em;
pub mod error;
pub mod evaluation;
pub mod model;
#[cfg(test)]
pub(crate) mod testkit;

pub use controller::{AgentFsc, JointPolicy};
pub use error::{Error, Result};
pub use model::{DecPomdpModel, Dims, NormalizedRewards, SuccessorIndex};
