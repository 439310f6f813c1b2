//! Simulation and series diagnostics for the stochastic combustion process.

pub mod animals;
pub mod classifier;
pub mod cli;
pub mod combustion;
pub mod dist;
pub mod rng;
pub mod tadbp;
pub mod walks;
