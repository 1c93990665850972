//! Spacecraft docking control laboratory.
//!
//! Building blocks:
//!
//! - [`dynamics`]: Clohessy-Wiltshire relative motion, quaternion attitude,
//!   RK4 integration, linearization, and discretization.
//! - [`slosh`]: equivalent-mechanical fuel-slosh disturbance surrogate.
//! - [`mpc`]: condensed box-constrained QP planner producing nominal
//!   docking trajectories.
//! - [`nn`]: dense network substrate (forward/backward, adaptive-moment
//!   optimizer, Gaussian heads, running normalization, checkpoints).
//! - [`ppo`] and [`sac`]: from-scratch actor-critic agents.
//! - [`env`]: the docking MDP with both reward functions and the
//!   stabilization / admissible-zone / keep-out rules.
//! - [`eval`]: seeded Monte Carlo evaluation and training-curve capture.
//! - [`app`]: the train / evaluate / simulate / plan / report entry points
//!   the command-line binary dispatches to.

pub mod app;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod mpc;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod sac;
pub mod seeding;
pub mod slosh;

pub use error::{Error, Result};
