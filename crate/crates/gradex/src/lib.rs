//! Gradient extrapolation solvers for finite-sum convex programs of the form
//!
//! ```text
//!     min_{x in X}  (1/m) * sum_i f_i(x) + mu * w(x)
//! ```
//!
//! where each `f_i` is smooth and convex and `w` is a distance-generating
//! function that is strongly convex with modulus 1. The crate provides:
//!
//! - [`geometry`]: feasible sets, distance-generating functions, generalized
//!   Bregman distances and the prox-mapping each solver step relies on;
//! - [`oracles`]: exact and stochastic first-order oracles with call counters;
//! - [`gem`]: the deterministic gradient extrapolation method and its
//!   step-size policies;
//! - [`rgem`]: the randomized variant that refreshes a single component
//!   gradient per iteration, plus a mini-batched stochastic-oracle mode;
//! - [`distsim`]: a discrete-event simulation of the same methods as a
//!   server/agent message protocol, with responsiveness and retry accounting;
//! - [`problems`]: benchmark problem construction and reference optima;
//! - [`bounds`]: the closed-form convergence/complexity predictions the
//!   experiment harness checks runs against;
//! - [`cli`] / [`config`]: the experiment runner.

pub mod bounds;
pub mod cli;
pub mod config;
pub mod distsim;
pub mod error;
pub mod gem;
pub mod geometry;
mod linalg;
pub mod oracles;
pub mod problems;
pub mod rgem;
pub mod rng;
mod steps;
pub mod trace;
pub mod vector;

pub use error::{Error, Result};
pub use vector::Vector;
