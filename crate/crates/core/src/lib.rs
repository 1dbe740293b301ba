//! Exact solvers and simulators for discrete-time mean-field stochastic teams
//! on finite state and action spaces.
//!
//! - [`model`]: the team model (affine mean-field kernel, quadratic cost).
//! - [`measure`]: enumeration of empirical measures, joint action measures,
//!   simplex grids and gridded policy kernels.
//! - [`lifted`]: the measure-valued MDP of an `N`-agent team, its value
//!   iteration, exchangeable action realization and the symmetric-policy chain.
//! - [`mkv`]: the quantized representative-agent (McKean-Vlasov) MDP.
//! - [`sim`]: Monte Carlo rollouts, propagation-of-chaos estimates, the
//!   Markov-property check and the finite-population optimality gap.

pub mod bundled;
pub mod error;
pub mod lifted;
pub mod measure;
pub mod mkv;
pub mod model;
pub mod policy;
pub mod sim;

pub use error::{Error, Result};
pub use model::{load_model, EnvironmentModel, ModelConfig, SimplexPoint};
pub use policy::{Horizon, PolicyKernel};
