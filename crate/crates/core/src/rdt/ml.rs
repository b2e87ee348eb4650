//! Random-duality estimate for exact ML detection over `{-1/sqrt(n), 1/sqrt(n)}^n`.
//!
//! After the inner maximization over `nu` the objective depends on the
//! overlap `c1` alone:
//! `xi(c1) = sqrt(alpha) sqrt(2 - 2 c1 + sigma^2) - sqrt(2/pi) exp(-nu^2/2)`
//! with `nu = sqrt(2) erfinv(-c1)`. Its derivative is simply
//! `-sqrt(alpha)/sqrt(2 - 2 c1 + sigma^2) - nu`, which is what the minimum
//! search tracks. Near `c1 = 1` everything is written in terms of the gap
//! `1 - c1` so high-SNR minimizers keep full relative precision.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::RdtParams;
use crate::error::{Error, Result};
use crate::model::sigma_to_snr_db;
use crate::numerics::special::{SQRT_2, SQRT_2_PI};
use crate::numerics::{erf, erfcinv, erfinv, find_root, OptimizerSettings};

/// `sqrt(2) erfinv(-c1)`.
pub fn nu_hat_ml(c1: f64) -> Result<f64> {
    Ok(SQRT_2 * erfinv(-c1)?)
}

/// `nu_hat_ml(1 - gap)` without forming `1 - gap`.
pub fn nu_hat_ml_gap(gap: f64) -> Result<f64> {
    Ok(-SQRT_2 * erfcinv(gap)?)
}

/// Dual objective before maximizing over `nu`:
/// `sqrt(alpha) sqrt(2 - 2c1 + sigma^2) - E|h + nu| - nu c1`.
pub fn xi_rd_ml_dual(params: &RdtParams, c1: f64, nu: f64) -> Result<f64> {
    let arg = 2.0 - 2.0 * c1 + params.sigma_sq();
    if arg < 0.0 {
        return Err(Error::Domain(format!("2 - 2 c1 + sigma^2 = {arg} < 0")));
    }
    let e_abs = nu * erf(nu / SQRT_2) + SQRT_2_PI * (-0.5 * nu * nu).exp();
    Ok(params.alpha.sqrt() * arg.sqrt() - e_abs - nu * c1)
}

pub fn xi_rd_ml(params: &RdtParams, c1: f64) -> Result<f64> {
    if !(c1.abs() < 1.0) {
        return Err(Error::Domain(format!("c1 = {c1} outside (-1, 1)")));
    }
    xi_rd_ml_gap(params, 1.0 - c1)
}

/// `xi_rd_ml(1 - gap)`.
pub fn xi_rd_ml_gap(params: &RdtParams, gap: f64) -> Result<f64> {
    let nu = nu_hat_ml_gap(gap)?;
    Ok(params.alpha.sqrt() * (2.0 * gap + params.sigma_sq()).sqrt() - SQRT_2_PI * (-0.5 * nu * nu).exp())
}

/// `d xi_rd_ml / d c1` at `c1 = 1 - gap`.
pub fn xi_rd_ml_slope_gap(params: &RdtParams, gap: f64) -> Result<f64> {
    let nu = nu_hat_ml_gap(gap)?;
    Ok(-params.alpha.sqrt() / (2.0 * gap + params.sigma_sq()).sqrt() - nu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlMinimum {
    pub c1: f64,
    /// `1 - c1`, kept separately for precision.
    pub gap: f64,
    pub xi: f64,
    pub perr: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlRdtSolution {
    pub c1_global: f64,
    pub xi_global: f64,
    pub perr: f64,
    pub nu_hat: f64,
    /// All local minima in increasing `c1`, the global one included.
    pub local_minima: Vec<MlMinimum>,
}

/// Smallest gap searched: `1e-9`, or `1e-12` above 14 dB.
fn gap_floor(params: &RdtParams) -> f64 {
    if params.sigma > 0.0 && sigma_to_snr_db(params.sigma) > 14.0 {
        1e-12
    } else {
        1e-9
    }
}

/// 2000 gaps: 1500 uniform in `c1` on `[0, 0.99]`, then 500 geometric down
/// to the floor. Returned in decreasing gap (increasing `c1`) order.
fn gap_grid(floor: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..1500).map(|i| 1.0 - 0.99 * i as f64 / 1499.0).collect();
    let (a, b) = (0.01f64.ln(), floor.ln());
    g.extend((1..=500).map(|k| (a + (b - a) * k as f64 / 500.0).exp()));
    g
}

fn minimum_at(params: &RdtParams, gap: f64) -> Result<MlMinimum> {
    Ok(MlMinimum {
        c1: 1.0 - gap,
        gap,
        xi: xi_rd_ml_gap(params, gap)?,
        perr: gap / 2.0,
        nu: nu_hat_ml_gap(gap)?,
    })
}

/// All local minima of `xi_rd_ml` on `[0, 1 - floor]`, found as sign changes
/// of the slope on a dense grid and refined by root finding in `ln(gap)`.
pub fn ml_minimize(params: &RdtParams) -> Result<MlRdtSolution> {
    let floor = gap_floor(params);
    let grid = gap_grid(floor);
    let slopes = grid
        .iter()
        .map(|&g| xi_rd_ml_slope_gap(params, g))
        .collect::<Result<Vec<f64>>>()?;
    let settings = OptimizerSettings::default().with_x_tol(1e-13);
    let mut minima = Vec::new();
    for k in 0..grid.len() - 1 {
        if slopes[k] < 0.0 && slopes[k + 1] >= 0.0 {
            let t = find_root(
                |t| xi_rd_ml_slope_gap(params, t.exp()).unwrap_or(f64::NAN),
                grid[k].ln(),
                grid[k + 1].ln(),
                &settings,
            )?;
            minima.push(minimum_at(params, t.exp())?);
        }
    }
    if slopes[slopes.len() - 1] < 0.0 {
        // still descending at the cap: the cap itself is the minimizer
        minima.push(minimum_at(params, floor)?);
    }
    if slopes[0] > 0.0 {
        minima.insert(0, minimum_at(params, 1.0)?);
    }
    let best = minima
        .iter()
        .min_by(|a, b| a.xi.total_cmp(&b.xi))
        .copied()
        .ok_or(Error::NotConverged {
            what: "ml_minimize",
            evals: grid.len(),
        })?;
    Ok(MlRdtSolution {
        c1_global: best.c1,
        xi_global: best.xi,
        perr: best.perr,
        nu_hat: best.nu,
        local_minima: minima,
    })
}

/// SNRs (dB) bounding the two-minima regime of the ML curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalSnrs {
    /// Highest SNR at which a second local minimum exists.
    pub multi_onset_db: Option<f64>,
    /// SNR at which the two minima have equal value (the global minimizer jumps).
    pub discontinuity_db: Option<f64>,
}

fn minima_at(alpha: f64, snr_db: f64) -> Result<MlRdtSolution> {
    ml_minimize(&RdtParams::from_snr_db(alpha, snr_db)?)
}

/// Locates both critical SNRs on `[0, 20]` dB: a 0.25 dB sweep downward,
/// then bisection to 1e-4 dB.
pub fn ml_critical_snrs(alpha: f64) -> Result<CriticalSnrs> {
    let step = 0.25;
    let mut hi = 20.0;
    let mut onset = None;
    while hi - step >= 0.0 {
        let lo = hi - step;
        if minima_at(alpha, lo)?.local_minima.len() >= 2 {
            let (mut a, mut b) = (lo, hi);
            while b - a > 1e-4 {
                let m = 0.5 * (a + b);
                if minima_at(alpha, m)?.local_minima.len() >= 2 {
                    a = m;
                } else {
                    b = m;
                }
            }
            onset = Some(a);
            break;
        }
        hi = lo;
    }
    let Some(top) = onset else {
        return Ok(CriticalSnrs {
            multi_onset_db: None,
            discontinuity_db: None,
        });
    };

    // value of the low-overlap minimum minus the high-overlap one
    let spread = |snr: f64| -> Result<Option<f64>> {
        let sol = minima_at(alpha, snr)?;
        let m = &sol.local_minima;
        Ok((m.len() >= 2).then(|| m[0].xi - m[m.len() - 1].xi))
    };
    let mut upper = top;
    let mut disc = None;
    while upper - step >= 0.0 {
        let lower = upper - step;
        match spread(lower)? {
            Some(d) if d > 0.0 => upper = lower,
            Some(_) => {
                let (mut a, mut b) = (lower, upper);
                while b - a > 1e-4 {
                    let m = 0.5 * (a + b);
                    match spread(m)? {
                        Some(d) if d <= 0.0 => a = m,
                        _ => b = m,
                    }
                }
                disc = Some(0.5 * (a + b));
                break;
            }
            None => break,
        }
    }
    Ok(CriticalSnrs {
        multi_onset_db: Some(top),
        discontinuity_db: disc,
    })
}

/// Published first-level-lifted ML numbers, kept for side-by-side reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiftedMlRow {
    pub snr_db: f64,
    pub xi: Option<f64>,
    pub perr: f64,
}

pub const LIFTED_ML_TABLE: [LiftedMlRow; 8] = [
    LiftedMlRow { snr_db: 8.0, xi: Some(0.33339), perr: 9.00e-2 },
    LiftedMlRow { snr_db: 9.0, xi: Some(0.31048), perr: 2.25e-2 },
    LiftedMlRow { snr_db: 10.0, xi: Some(0.28099), perr: 4.20e-3 },
    LiftedMlRow { snr_db: 11.0, xi: Some(0.25162), perr: 9.72e-4 },
    LiftedMlRow { snr_db: 12.0, xi: Some(0.22457), perr: 2.01e-4 },
    LiftedMlRow { snr_db: 13.0, xi: Some(0.20022), perr: 3.30e-5 },
    LiftedMlRow { snr_db: 14.0, xi: None, perr: 3.70e-6 },
    LiftedMlRow { snr_db: 15.0, xi: None, perr: 2.46e-7 },
];

pub fn lifted_ml_row(snr_db: f64) -> Option<LiftedMlRow> {
    LIFTED_ML_TABLE.iter().copied().find(|r| (r.snr_db - snr_db).abs() < 1e-9)
}

/// ML prediction curve as CSV rows `snr_db,xi,perr,n_minima`.
pub fn write_ml_curve_csv<W: Write>(mut w: W, rows: &[(f64, MlRdtSolution)]) -> io::Result<()> {
    writeln!(w, "snr_db,xi,perr,n_minima")?;
    for (snr, sol) in rows {
        writeln!(w, "{snr},{},{},{}", sol.xi_global, sol.perr, sol.local_minima.len())?;
    }
    Ok(())
}
