//! Random-duality characterization of the first CLuP iterate.
//!
//! The first step maximizes `x0' x` over the residual ball and the box.
//! Writing `x = x0 - z` with `z` in `[0, 2/sqrt(n)]^n` (after flipping signs
//! so that `x0 = 1/sqrt(n)`), the analysis tracks `c1z = |z|^2` and
//! `s1 = x_sol' z`; `rho` is the fraction of coordinates where `x0` agrees
//! with `x_sol`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::clup::StationaryPoint;
use super::RdtParams;
use crate::error::{Error, Result};
use crate::numerics::special::{SQRT_2, SQRT_2PI, SQRT_PI_2};
use crate::numerics::{
    erf, erfc, find_root, maximize_concave_2d, minimize_scalar, norm_cdf, norm_pdf, AscentOutcome, AscentSettings,
    Local2, OptimizerSettings,
};

fn check(gamma: f64, rho: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma must be positive and finite, got {gamma}")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho must lie in [0, 1], got {rho}")));
    }
    Ok(())
}

/// Middle-interval term of `E min_{z in [0,2]} (h + nu) z + gamma z^2`.
pub fn i11(gamma: f64, nu: f64) -> f64 {
    let p = SQRT_PI_2 * (nu * nu + 1.0);
    let s = 4.0 * gamma + nu;
    -((-0.5 * s * s).exp() * (nu - 4.0 * gamma) + p * erf(2.0 * SQRT_2 * gamma + nu / SQRT_2)
        - p * erf(nu / SQRT_2)
        - (-0.5 * nu * nu).exp() * nu)
        / (4.0 * SQRT_2PI * gamma)
}

/// Saturated-coordinate (`z = 2`) term.
pub fn i21(gamma: f64, nu: f64) -> f64 {
    let s = 4.0 * gamma + nu;
    (4.0 * gamma + 2.0 * nu) * 0.5 * erfc(s / SQRT_2) - 2.0 * (-0.5 * s * s).exp() / SQRT_2PI
}

/// `rho`-mixture of the agreeing (`nu`) and disagreeing (`-nu`) coordinates.
pub fn i_box1(gamma: f64, nu: f64, rho: f64) -> Result<f64> {
    check(gamma, rho)?;
    Ok(rho * i11(gamma, nu) + (1.0 - rho) * i11(gamma, -nu) + rho * i21(gamma, nu) + (1.0 - rho) * i21(gamma, -nu))
}

/// Moments of the optimal `z = clamp(-(h+nu)/(2 gamma), 0, 2)` and the
/// Hessian of `i11 + i21` in `(nu, gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZMoments {
    pub mean: f64,
    pub second: f64,
    pub hessian: [[f64; 2]; 2],
}

pub fn z_moments(gamma: f64, nu: f64) -> ZMoments {
    // z = 2 below a, z = 0 above b, interior in between
    let a = -4.0 * gamma - nu;
    let b = -nu;
    let sat = norm_cdf(a);
    let pm = if a > 0.0 {
        norm_cdf(-a) - norm_cdf(-b)
    } else {
        norm_cdf(b) - sat
    };
    let (pa, pb) = (norm_pdf(a), norm_pdf(b));
    let m1 = pa - pb;
    let m2 = pm + a * pa - b * pb;
    let s1 = nu * pm + m1;
    let s2 = m2 + 2.0 * nu * m1 + nu * nu * pm;
    let g2 = gamma * gamma;
    let hvg = s1 / (2.0 * g2);
    ZMoments {
        mean: 2.0 * sat - s1 / (2.0 * gamma),
        second: 4.0 * sat + s2 / (4.0 * g2),
        hessian: [[-pm / (2.0 * gamma), hvg], [hvg, -s2 / (2.0 * g2 * gamma)]],
    }
}

pub fn xi_rd_1(params: &RdtParams, c1z: f64, s1: f64, gamma: f64, nu: f64, rho: f64) -> Result<f64> {
    if !(c1z >= 0.0) {
        return Err(Error::Domain(format!("c1z must be >= 0, got {c1z}")));
    }
    Ok(params.alpha.sqrt() * (c1z + params.sigma_sq()).sqrt() + i_box1(gamma, nu, rho)? - nu * s1 - gamma * c1z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Saddle1 {
    xi: f64,
    gamma: f64,
    nu: f64,
}

const START: (f64, f64) = (1.0, 0.0);

/// `max_{gamma, nu} xi_rd_1`, Newton ascent with closed-form derivatives.
fn saddle1(params: &RdtParams, c1z: f64, s1: f64, rho: f64, start: (f64, f64)) -> Result<Saddle1> {
    let base = params.alpha.sqrt() * (c1z + params.sigma_sq()).sqrt();
    let eval = |x: [f64; 2]| {
        let (nu, gamma) = (x[0], x[1]);
        let p = z_moments(gamma, nu);
        let n = z_moments(gamma, -nu);
        let (r, q) = (rho, 1.0 - rho);
        let value = base + r * (i11(gamma, nu) + i21(gamma, nu)) + q * (i11(gamma, -nu) + i21(gamma, -nu))
            - nu * s1
            - gamma * c1z;
        Local2 {
            value,
            grad: [r * p.mean - q * n.mean - s1, r * p.second + q * n.second - c1z],
            hess: [
                [
                    r * p.hessian[0][0] + q * n.hessian[0][0],
                    r * p.hessian[0][1] - q * n.hessian[0][1],
                ],
                [
                    r * p.hessian[1][0] - q * n.hessian[1][0],
                    r * p.hessian[1][1] + q * n.hessian[1][1],
                ],
            ],
        }
    };
    let settings = AscentSettings::default();
    let mut last = Error::NotConverged {
        what: "first-iteration saddle",
        evals: settings.max_iter,
    };
    for (g0, n0) in [start, START, (0.3, 0.5), (3.0, -0.5)] {
        match maximize_concave_2d(eval, |x| x[1] > 1e-3, [n0, g0], &settings) {
            Ok(AscentOutcome::Converged(a)) if a.grad_norm <= 1e-8 => {
                return Ok(Saddle1 {
                    xi: a.value,
                    gamma: a.x[1],
                    nu: a.x[0],
                })
            }
            Ok(AscentOutcome::Unbounded) => {
                last = Error::Domain(format!("first-iteration saddle unbounded at c1z = {c1z}, s1 = {s1}"))
            }
            Ok(_) => {}
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Stand-in value where the saddle is infinite, i.e. `(c1z, s1)` is not an
/// achievable pair of moments.
const INFEASIBLE: f64 = 1e3;

/// Smallest `c1z` compatible with `s1`: the signed mean must come from one
/// side of the mixture, and `E z^2 >= (E z)^2` on that side.
fn c1z_floor(s1: f64, rho: f64) -> f64 {
    let side = if s1 < 0.0 { 1.0 - rho } else { rho };
    if side <= 0.0 {
        return f64::INFINITY;
    }
    s1 * s1 / side
}

/// `(value, c1z, gamma, nu)` of `min_{c1z in [0,4]} max_{gamma, nu} xi_rd_1`.
fn min_over_c1z(params: &RdtParams, s1: f64, rho: f64) -> Result<(f64, f64, f64, f64)> {
    let lo = c1z_floor(s1, rho) * (1.0 + 1e-9) + 1e-12;
    if !(lo < 4.0) {
        return Ok((INFEASIBLE, lo, START.0, START.1));
    }
    let n = 32;
    let grid: Vec<f64> = (1..n).map(|i| lo + (4.0 - lo) * i as f64 / n as f64).collect();
    let mut warm = START;
    let mut vals = Vec::with_capacity(grid.len());
    let mut warms = Vec::with_capacity(grid.len());
    for &c in &grid {
        match saddle1(params, c, s1, rho, warm) {
            Ok(s) => {
                warm = (s.gamma, s.nu);
                vals.push(s.xi);
            }
            Err(_) => vals.push(INFEASIBLE),
        }
        warms.push(warm);
    }
    let i = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    if vals[i] >= INFEASIBLE {
        return Ok((INFEASIBLE, grid[i], warm.0, warm.1));
    }
    let a = if i == 0 { lo } else { grid[i - 1] };
    let b = if i + 1 == grid.len() { 4.0 } else { grid[i + 1] };
    let w = warms[i];
    let settings = OptimizerSettings::default().with_x_tol(1e-12).with_max_evals(300);
    let opt = minimize_scalar(
        |c| saddle1(params, c, s1, rho, w).map(|s| s.xi).unwrap_or(INFEASIBLE),
        a,
        b,
        &settings,
    )?;
    let s = saddle1(params, opt.x, s1, rho, w)?;
    Ok((s.xi, opt.x, s.gamma, s.nu))
}

/// `s_{x,1}`: mean of the interior part of `z`.
pub fn s_x1(gamma: f64, nu: f64) -> f64 {
    -nu / 2.0 / gamma * (0.5 * erfc(nu / SQRT_2) - 0.5 * erfc((nu + 4.0 * gamma) / SQRT_2))
        + 1.0 / 2.0 / gamma / SQRT_2PI * ((-nu * nu / 2.0).exp() - (-(4.0 * gamma + nu).powi(2) / 2.0).exp())
}

pub fn s_xsq1(gamma: f64, nu: f64) -> f64 {
    -i11(gamma, nu) / gamma
}

/// `s_{x,2}`: twice the probability of saturating at `z = 2`.
pub fn s_x2(gamma: f64, nu: f64) -> f64 {
    2.0 * (0.5 * erfc((4.0 * gamma + nu) / SQRT_2))
}

pub fn s_xsq2(gamma: f64, nu: f64) -> f64 {
    2.0 * s_x2(gamma, nu)
}

/// Expected overlap `E x_sol' x` of the (unnormalized) first iterate.
pub fn expected_overlap(gamma: f64, nu: f64, rho: f64) -> f64 {
    1.0 - (rho * s_x1(gamma, nu) + (1.0 - rho) * s_x1(gamma, -nu) + rho * s_x2(gamma, nu)
        + (1.0 - rho) * s_x2(gamma, -nu))
}

/// Expected `|x|^2` of the first iterate, given the expected overlap.
pub fn expected_norm_sq(gamma: f64, nu: f64, rho: f64, overlap: f64) -> f64 {
    rho * s_xsq1(gamma, nu) + (1.0 - rho) * s_xsq1(gamma, -nu) + rho * s_xsq2(gamma, nu)
        + (1.0 - rho) * s_xsq2(gamma, -nu)
        + 2.0 * overlap
        - 1.0
}

/// Fraction of coordinates whose sign ends up wrong after the first step.
pub fn first_iter_perr(gamma: f64, nu: f64, rho: f64) -> f64 {
    1.0 - (rho * 0.5 * erfc((-2.0 * gamma - nu) / SQRT_2) + (1.0 - rho) * 0.5 * erfc((-2.0 * gamma + nu) / SQRT_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstIterSolution {
    pub nu_hat: f64,
    pub gamma_hat: f64,
    pub c1z_hat: f64,
    pub s1_hat: f64,
    pub xi1: f64,
    pub perr1: f64,
    pub e_norm_sq: f64,
    pub e_overlap: f64,
    pub rho: f64,
}

impl FirstIterSolution {
    pub const CSV_HEADER: &'static str = "nu,gamma,c1z,s1,xi1,perr1,norm_sq,overlap";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.nu_hat, self.gamma_hat, self.c1z_hat, self.s1_hat, self.xi1, self.perr1, self.e_norm_sq, self.e_overlap
        )
    }

    pub fn write_csv<W: Write>(rows: &[Self], mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in rows {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

/// Smallest `s1` for which `min_{c1z} max_{gamma, nu} xi_rd_1 = r`.
///
/// `V(s1) = min_{c1z} max xi_rd_1` is convex; the answer is its left crossing
/// of `r`, bracketed by stepping left from the minimizer of `V`.
pub fn first_iter_solve(params: &RdtParams, r: f64, rho: f64) -> Result<FirstIterSolution> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidConfig(format!("radius must be positive, got {r}")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidConfig(format!("rho must lie in (0, 1), got {rho}")));
    }
    let v = |s1: f64| min_over_c1z(params, s1, rho).map(|t| t.0).unwrap_or(INFEASIBLE);
    let s_lo = -2.0 * (1.0 - rho) * (1.0 - 1e-9);
    let s_hi = 2.0 * rho * (1.0 - 1e-9);
    let settings = OptimizerSettings::default().with_x_tol(1e-9).with_max_evals(300);
    let vmin = minimize_scalar(v, s_lo, s_hi, &settings)?;
    if vmin.value > r {
        return Err(Error::Domain(format!(
            "radius {r} is below the first-iteration floor {}",
            vmin.value
        )));
    }
    // V(right) <= r throughout; step left until V exceeds r
    let mut right = vmin.x;
    let left = loop {
        let next = (right - 0.05).max(s_lo);
        if v(next) > r {
            break next;
        }
        if next <= s_lo {
            return Err(Error::NoBracket {
                what: "first_iter_solve",
                lo: s_lo,
                hi: vmin.x,
            });
        }
        right = next;
    };
    let s1 = find_root(|s| v(s) - r, left, right, &OptimizerSettings::default().with_x_tol(1e-12))?;
    let (xi1, c1z, gamma, nu) = min_over_c1z(params, s1, rho)?;
    let overlap = expected_overlap(gamma, nu, rho);
    Ok(FirstIterSolution {
        nu_hat: nu,
        gamma_hat: gamma,
        c1z_hat: c1z,
        s1_hat: s1,
        xi1,
        perr1: first_iter_perr(gamma, nu, rho),
        e_norm_sq: expected_norm_sq(gamma, nu, rho, overlap),
        e_overlap: overlap,
        rho,
    })
}

/// Whether the first iterate already lies beyond the lower stationary point
/// (its expected `|x|^2` exceeds the smallest stationary `c2`). An empty list
/// counts as escaped.
pub fn escape_check(first: &FirstIterSolution, stationary: &[StationaryPoint]) -> bool {
    stationary
        .iter()
        .map(|p| p.c2)
        .min_by(f64::total_cmp)
        .is_none_or(|c2| first.e_norm_sq > c2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(db: f64) -> RdtParams {
        RdtParams::from_snr_db(0.8, db).unwrap()
    }

    #[test]
    fn symmetric_mixture() {
        for &(g, v) in &[(0.3, 0.7), (1.0, -2.0), (2.5, 0.1)] {
            let a = i_box1(g, v, 0.5).unwrap();
            let b = i_box1(g, -v, 0.5).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        assert!(i_box1(0.0, 0.0, 0.5).is_err());
        assert!(i_box1(1.0, 0.0, 1.5).is_err());
    }

    #[test]
    fn large_gamma_approaches_half_gaussian_quadratic() {
        // With nu = 0 and a wide box, only h < 0 contributes: -E[h^2; h<0]/(4 gamma).
        for &g in &[10.0, 100.0] {
            let v = i_box1(g, 0.0, 0.5).unwrap();
            assert!((v + 1.0 / (8.0 * g)).abs() < 1e-12, "gamma={g}: {v}");
        }
    }

    #[test]
    fn moments_match_finite_differences() {
        for &(g, v) in &[(0.7, 0.5), (1.3, -1.0), (0.4, 2.0)] {
            let m = z_moments(g, v);
            let f = |g: f64, v: f64| i11(g, v) + i21(g, v);
            let h = 1e-5;
            assert!(((f(g, v + h) - f(g, v - h)) / (2.0 * h) - m.mean).abs() < 1e-8);
            assert!(((f(g + h, v) - f(g - h, v)) / (2.0 * h) - m.second).abs() < 1e-8);
            let hvg = (z_moments(g + h, v).mean - z_moments(g - h, v).mean) / (2.0 * h);
            assert!((hvg - m.hessian[0][1]).abs() < 1e-7);
        }
    }

    #[test]
    fn s1_enters_linearly() {
        let q = p(10.0);
        let a = xi_rd_1(&q, 0.33, -0.18, 0.68, 0.5, 0.5).unwrap();
        let b = xi_rd_1(&q, 0.33, -0.18 + 0.01, 0.68, 0.5, 0.5).unwrap();
        assert!((b - a + 0.5 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn printed_table_values() {
        let x = xi_rd_1(&p(10.0), 0.3306, -0.1844, 0.6816, 0.5075, 0.5).unwrap();
        assert!((x - 0.2252).abs() < 2e-4, "{x}");
        let x = xi_rd_1(&p(13.0), 0.1753, -0.1314, 0.9420, 0.4953, 0.5).unwrap();
        assert!((x - 0.1594).abs() < 2e-4, "{x}");
    }

    #[test]
    fn solve_at_10db() {
        let s = first_iter_solve(&p(10.0), 0.225173, 0.5).unwrap();
        let want = [0.5075, 0.6816, 0.3306, -0.1844, 0.1134, 0.6749, 0.6722];
        let got = [s.nu_hat, s.gamma_hat, s.c1z_hat, s.s1_hat, s.perr1, s.e_norm_sq, s.e_overlap];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-3, "{got:?}");
        }
        assert!((s.xi1 - 0.225173).abs() < 1e-8);
    }

    #[test]
    fn radius_below_floor_is_reported() {
        assert!(first_iter_solve(&p(10.0), 1e-3, 0.5).is_err());
    }

    #[test]
    fn escape_convention() {
        let s = FirstIterSolution {
            nu_hat: 0.0,
            gamma_hat: 1.0,
            c1z_hat: 0.0,
            s1_hat: 0.0,
            xi1: 0.0,
            perr1: 0.0,
            e_norm_sq: 0.6749,
            e_overlap: 0.0,
            rho: 0.5,
        };
        assert!(escape_check(&s, &[]));
        let sp = |c2| StationaryPoint {
            xi: 0.0,
            c2,
            c1: 0.0,
            nu: 0.0,
            gamma: 0.0,
            gamma1: 0.0,
            grad_norm: 0.0,
        };
        assert!(escape_check(&s, &[sp(0.46075), sp(0.93035)]));
        assert!(!escape_check(&s, &[sp(0.7)]));
    }
}
