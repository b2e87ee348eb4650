//! CLuP (controlled loosening-up) detection for binary MIMO systems, with the
//! random-duality machinery that predicts its performance.

pub mod baselines;
pub mod clup;
pub mod error;
pub mod inner_solver;
pub mod model;
pub mod numerics;
pub mod rdt;

pub use error::{Error, Result};
