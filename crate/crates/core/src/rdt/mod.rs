//! Random-duality predictions: the box relaxation and CLuP fixed points
//! ([`clup`]), the plain ML estimate ([`ml`]) and the first CLuP iterate
//! ([`first_iter`]).

pub mod clup;
pub mod first_iter;
pub mod ml;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::snr_db_to_sigma;
use crate::numerics::{golden_section, OptimizerSettings};

/// System ratio `alpha = m/n` and noise scale `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdtParams {
    pub alpha: f64,
    pub sigma: f64,
}

impl RdtParams {
    pub fn new(alpha: f64, sigma: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("alpha must be positive and finite, got {alpha}")));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("sigma must be >= 0 and finite, got {sigma}")));
        }
        Ok(RdtParams { alpha, sigma })
    }

    pub fn from_snr_db(alpha: f64, snr_db: f64) -> Result<Self> {
        Self::new(alpha, snr_db_to_sigma(snr_db))
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// Indices of grid points lying below both neighbours by at least `depth`.
pub(crate) fn interior_minima(values: &[f64], depth: f64) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] + depth <= values[i - 1] && values[i] + depth <= values[i + 1])
        .collect()
}

/// Refines each interior grid minimum by golden-section search between its
/// neighbours.
pub(crate) fn refine_grid_minima<F>(grid: &[f64], values: &[f64], mut f: F) -> Result<Vec<(f64, f64)>>
where
    F: FnMut(f64) -> f64,
{
    let settings = OptimizerSettings::default().with_max_evals(400);
    let mut out = Vec::new();
    for i in interior_minima(values, 1e-10) {
        let opt = golden_section(&mut f, grid[i - 1], grid[i + 1], &settings)?;
        let (x, v) = if opt.value <= values[i] { (opt.x, opt.value) } else { (grid[i], values[i]) };
        out.push((x, v));
    }
    Ok(out)
}
