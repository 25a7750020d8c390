//! Solvers for distributionally robust stochastic control with known
//! dynamics `x' = f(x, a, w)`.
//!
//! The adversary perturbs the noise law inside a Wasserstein or
//! f_k-divergence ball around a (possibly empirical) center. It either sees
//! the current action (`Adversary::Caa`) or does not (`Adversary::Cau`).

pub mod ambiguity;
pub mod bellman;
pub mod cli;
pub mod config;
pub mod measures;
pub mod models;
pub mod rate;
pub mod rng;
pub mod rollout;
pub mod search;
