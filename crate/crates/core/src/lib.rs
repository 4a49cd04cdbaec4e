//! Numerical laboratory for the rank dynamics of bootstrapped value
//! learning: effective-rank measurement, a kernel-regression model of
//! fitted Q-iteration, deep linear networks under discretized gradient
//! flow, a tabular gridworld with exact oracles, a from-scratch MLP
//! Q-network trainer with a singular-value penalty, and a reproducible
//! experiment runner.

pub mod deep_linear;
pub mod experiment;
pub mod gridworld;
pub mod kernel;
pub mod linalg;
pub mod neural;
pub mod rng;
