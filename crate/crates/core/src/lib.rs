//! Generalized Jackson networks: routing chains, traffic equations,
//! service laws, finite-N simulation, the mean-field limit and Poisson
//! hypothesis checks.

pub mod chain;
pub mod rng;
pub mod traffic;
pub mod quad;
pub mod service;
pub mod trace;
pub mod network;
pub mod nlmp;
pub mod des;
pub mod ph;
pub mod runner;
