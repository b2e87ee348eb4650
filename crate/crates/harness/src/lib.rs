//! Experiment driver for the CLuP detector: configuration, Monte Carlo
//! trials, theory commands and result serialization.

pub mod cli;
pub mod experiments;
pub mod montecarlo;
pub mod records;
