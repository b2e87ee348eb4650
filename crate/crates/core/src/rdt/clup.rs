//! Box-relaxation side of the random-duality analysis: the per-coordinate
//! objective `f_box1`, its Gaussian expectation, the saddle value over
//! `(gamma, nu)`, and everything built on top of it (polytope residual, CLuP
//! fixed-point prediction, curve scans, stationary points, radius limits).
//!
//! Order parameters: `c2 = |x|^2`, `c1 = x_sol' x`. All values are per
//! `sqrt(n)`.

use std::io::{self, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{refine_grid_minima, RdtParams};
use crate::error::{Error, Result};
use crate::numerics::special::{SQRT_2, SQRT_2PI, SQRT_PI_2};
use crate::numerics::{
    erf, erfc, find_root, gauss_legendre, maximize_concave_2d, minimize_scalar, norm_cdf, norm_pdf, AscentOutcome, AscentSettings,
    Local2, OptimizerSettings, Rule,
};

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("gamma must be positive and finite, got {gamma}")))
    }
}

/// `min_{x in [-1,1]} (h + nu) x + gamma x^2`, written piecewise.
pub fn f_box1(h: f64, gamma: f64, nu: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let t = h + nu;
    if t.abs() >= 2.0 * gamma {
        Ok(-t.abs() + gamma)
    } else {
        Ok(-t * t / (4.0 * gamma))
    }
}

/// Outer-branch term carrying the tail `h <= -2 gamma - nu`.
pub fn i22(gamma: f64, nu: f64) -> f64 {
    let s = nu + 2.0 * gamma;
    0.5 * (nu + gamma) * erfc(s / SQRT_2) - (-0.5 * s * s).exp() / SQRT_2PI
}

/// Middle-branch term; enters the expectation with a minus sign.
pub fn i1(gamma: f64, nu: f64) -> f64 {
    let p = SQRT_PI_2 * (nu * nu + 1.0);
    let up = nu + 2.0 * gamma;
    let dn = nu - 2.0 * gamma;
    (p * erf((2.0 * gamma - nu) / SQRT_2) + p * erf((2.0 * gamma + nu) / SQRT_2) + (-0.5 * up * up).exp() * dn
        - (-0.5 * dn * dn).exp() * up)
        / (4.0 * SQRT_2PI * gamma)
}

/// Outer-branch term carrying the tail `h >= 2 gamma - nu`.
pub fn i21(gamma: f64, nu: f64) -> f64 {
    let d = nu - 2.0 * gamma;
    -0.5 * (nu - gamma) * (erf(d / SQRT_2) + 1.0) - (-0.5 * d * d).exp() / SQRT_2PI
}

/// `E f_box1(h, gamma, nu)` for standard normal `h`, as `I22 - I1 + I21`.
pub fn e_fbox1(gamma: f64, nu: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(i22(gamma, nu) - i1(gamma, nu) + i21(gamma, nu))
}

/// Minimizer of `f_box1` in units of `1/sqrt(n)`: `clamp(-(h+nu)/(2 gamma), -1, 1)`.
pub fn optimal_x_coordinate(h: f64, gamma: f64, nu: f64) -> f64 {
    (-(h + nu) / (2.0 * gamma)).clamp(-1.0, 1.0)
}

/// First two moments of the optimal coordinate and the Hessian of
/// `E f_box1` in `(nu, gamma)`.
///
/// By the envelope theorem `d/dnu E f = E x*` and `d/dgamma E f = E x*^2`;
/// differentiating once more only sees the unclamped middle interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateMoments {
    pub mean: f64,
    pub second: f64,
    pub hessian: [[f64; 2]; 2],
}

/// `(P, E[t; mid], E[t^2; mid])` with `t = h + nu` over the unclamped
/// interval `|t| < 2 gamma`. Closed forms cancel badly once the interval is
/// narrow, so small `gamma` switches to Gauss-Legendre on the interval.
fn middle_moments(gamma: f64, nu: f64) -> (f64, f64, f64) {
    if gamma < 0.25 {
        static RULE: OnceLock<Rule> = OnceLock::new();
        let rule = RULE.get_or_init(|| gauss_legendre(24).expect("24-point rule"));
        let half = 2.0 * gamma;
        let (mut p, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
            let t = half * u;
            let f = w * half * norm_pdf(t - nu);
            p += f;
            s1 += f * t;
            s2 += f * t * t;
        }
        return (p, s1, s2);
    }
    let a = -2.0 * gamma - nu;
    let b = 2.0 * gamma - nu;
    // P(a < h < b) from whichever tail keeps precision
    let pm = if a > 0.0 {
        norm_cdf(-a) - norm_cdf(-b)
    } else if b < 0.0 {
        norm_cdf(b) - norm_cdf(a)
    } else {
        1.0 - norm_cdf(a) - norm_cdf(-b)
    };
    let (pa, pb) = (norm_pdf(a), norm_pdf(b));
    let m1 = pa - pb;
    let m2 = pm + a * pa - b * pb;
    (pm, nu * pm + m1, m2 + 2.0 * nu * m1 + nu * nu * pm)
}

pub fn coordinate_moments(gamma: f64, nu: f64) -> CoordinateMoments {
    let lower = norm_cdf(-2.0 * gamma - nu);
    let upper = norm_cdf(-(2.0 * gamma - nu));
    let (pm, s1, s2) = middle_moments(gamma, nu);
    let g2 = gamma * gamma;
    let hvg = s1 / (2.0 * g2);
    CoordinateMoments {
        mean: lower - upper - s1 / (2.0 * gamma),
        second: lower + upper + s2 / (4.0 * g2),
        hessian: [[-pm / (2.0 * gamma), hvg], [hvg, -s2 / (2.0 * g2 * gamma)]],
    }
}

/// `E f_box1` with the middle branch taken from [`middle_moments`]; equal to
/// [`e_fbox1`] but accurate for small `gamma`.
fn e_fbox1_stable(gamma: f64, nu: f64) -> f64 {
    i22(gamma, nu) - middle_moments(gamma, nu).2 / (4.0 * gamma) + i21(gamma, nu)
}

fn residual_sqrt(params: &RdtParams, c2: f64, c1: f64) -> Result<f64> {
    let arg = 1.0 - 2.0 * c1 + c2 + params.sigma_sq();
    if arg < 0.0 || !arg.is_finite() {
        return Err(Error::Domain(format!("1 - 2 c1 + c2 + sigma^2 = {arg} < 0")));
    }
    Ok(arg.sqrt())
}

/// The random-duality objective before the saddle over `(gamma, nu)`.
pub fn xi_rd(params: &RdtParams, c2: f64, c1: f64, gamma: f64, nu: f64) -> Result<f64> {
    let root = residual_sqrt(params, c2, c1)?;
    Ok(params.alpha.sqrt() * root + e_fbox1(gamma, nu)? - nu * c1 - gamma * c2)
}

/// A parameter tuple with its objective value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdtPoint {
    pub c2: f64,
    pub c1: f64,
    pub gamma: f64,
    pub nu: f64,
    pub xi: f64,
}

/// Maximizer of `xi_rd` over `(gamma > 0, nu)` at fixed `(c2, c1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saddle {
    pub xi: f64,
    pub gamma: f64,
    pub nu: f64,
    pub grad_norm: f64,
}

/// Largest admissible overlap: the supremum is finite only while `c1^2 < c2`,
/// and `(1 + c2)/2 >= sqrt(c2)` always.
pub fn c1_upper(c2: f64) -> f64 {
    ((1.0 + c2) / 2.0).min(c2.max(0.0).sqrt())
}

const DEFAULT_START: (f64, f64) = (1.0, -1.0);

/// `max_{gamma, nu} xi_rd(c2, c1, gamma, nu)` by damped Newton ascent on the
/// concave dual, using closed-form moments for the gradient and Hessian.
pub fn xi_rd_saddle(params: &RdtParams, c2: f64, c1: f64) -> Result<Saddle> {
    xi_rd_saddle_from(params, c2, c1, DEFAULT_START)
}

/// As [`xi_rd_saddle`], starting the ascent at `start = (gamma, nu)`.
pub fn xi_rd_saddle_from(params: &RdtParams, c2: f64, c1: f64, start: (f64, f64)) -> Result<Saddle> {
    if !(0.0..1.0).contains(&c2) || c1 * c1 >= c2 {
        return Err(Error::Domain(format!(
            "saddle over (gamma, nu) is unbounded unless c1^2 < c2 < 1 (c2 = {c2}, c1 = {c1})"
        )));
    }
    let base = params.alpha.sqrt() * residual_sqrt(params, c2, c1)?;
    let eval = |x: [f64; 2]| {
        let (nu, gamma) = (x[0], x[1]);
        let m = coordinate_moments(gamma, nu);
        Local2 {
            value: base + e_fbox1_stable(gamma, nu) - nu * c1 - gamma * c2,
            grad: [m.mean - c1, m.second - c2],
            hess: m.hessian,
        }
    };
    let settings = AscentSettings::default();
    let starts = [start, DEFAULT_START, (0.5, 0.0), (0.2, -3.0), (3.0, -0.5)];
    let mut last_err = None;
    for &(g0, n0) in &starts {
        if !(g0 > 0.0) || !g0.is_finite() || !n0.is_finite() {
            continue;
        }
        match maximize_concave_2d(eval, |x| x[1] > 0.0, [n0, g0], &settings) {
            Ok(AscentOutcome::Converged(a)) if a.grad_norm <= 1e-8 => {
                return Ok(Saddle {
                    xi: a.value,
                    gamma: a.x[1],
                    nu: a.x[0],
                    grad_norm: a.grad_norm,
                })
            }
            Ok(AscentOutcome::Converged(_)) => {
                last_err = Some(Error::NotConverged {
                    what: "xi_rd_saddle",
                    evals: settings.max_iter,
                })
            }
            Ok(AscentOutcome::Unbounded) => {
                last_err = Some(Error::Domain(format!("saddle diverged at c2 = {c2}, c1 = {c1}")))
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(Error::NotConverged {
        what: "xi_rd_saddle",
        evals: 0,
    }))
}

/// Overlap grid on `[0, c1_upper(c2))`: uniform in the body, geometric
/// towards the upper end where minimizers sit at high SNR.
fn c1_grid(c2: f64, body: usize, tail: usize) -> Vec<f64> {
    let hi = c1_upper(c2);
    let mut g: Vec<f64> = (0..body).map(|i| hi * i as f64 / body as f64).collect();
    let start = (hi / body as f64).ln();
    let end = (hi * 1e-10).ln();
    for k in 0..tail {
        let d = (start + (end - start) * (k as f64 + 1.0) / tail as f64).exp();
        g.push(hi - d);
    }
    g.dedup();
    g
}

/// The overlap coordinate `u = -ln(1 - c1/hi)` used for refinement, so that
/// minimizers close to the upper end are resolved in relative terms.
fn to_u(c1: f64, hi: f64) -> f64 {
    -(-c1 / hi).ln_1p()
}

fn from_u(u: f64, hi: f64) -> f64 {
    -hi * (-u).exp_m1()
}

/// `min_{c1} max_{gamma, nu} xi_rd` at fixed `c2`, by a grid over `c1`
/// followed by Brent refinement around every grid minimum.
pub fn min_over_c1(params: &RdtParams, c2: f64) -> Result<RdtPoint> {
    if !(c2 > 0.0 && c2 < 1.0) {
        return Err(Error::Domain(format!("c2 = {c2} outside (0, 1)")));
    }
    let hi = c1_upper(c2);
    let grid = c1_grid(c2, 48, 24);
    let mut values = Vec::with_capacity(grid.len());
    let mut saddles = Vec::with_capacity(grid.len());
    let mut warm = DEFAULT_START;
    for &c1 in &grid {
        // far up the geometric tail the dual can run away numerically; the
        // value there is large anyway, so such points simply drop out
        match xi_rd_saddle_from(params, c2, c1, warm) {
            Ok(s) => {
                warm = (s.gamma, s.nu);
                values.push(s.xi);
                saddles.push(s);
            }
            Err(_) => {
                values.push(f64::INFINITY);
                saddles.push(Saddle {
                    xi: f64::INFINITY,
                    gamma: warm.0,
                    nu: warm.1,
                    grad_norm: f64::INFINITY,
                });
            }
        }
    }
    let mut candidates: Vec<usize> = super::interior_minima(&values, 0.0);
    let best = (0..values.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    if !candidates.contains(&best) {
        candidates.push(best);
    }
    let settings = OptimizerSettings::default().with_x_tol(1e-11).with_max_evals(300);
    let mut out: Option<RdtPoint> = None;
    for i in candidates {
        let lo = to_u(grid[i.saturating_sub(1)], hi);
        let up = to_u(grid[(i + 1).min(grid.len() - 1)], hi);
        let warm = (saddles[i].gamma, saddles[i].nu);
        let mut last = saddles[i];
        let opt = minimize_scalar(
            |u| match xi_rd_saddle_from(params, c2, from_u(u, hi), warm) {
                Ok(s) => {
                    last = s;
                    s.xi
                }
                Err(_) => f64::INFINITY,
            },
            lo,
            up,
            &settings,
        )?;
        let c1 = from_u(opt.x, hi);
        let s = xi_rd_saddle_from(params, c2, c1, (last.gamma, last.nu))?;
        let (c1, s) = if s.xi <= values[i] { (c1, s) } else { (grid[i], saddles[i]) };
        if out.is_none_or(|p| s.xi < p.xi) {
            out = Some(RdtPoint {
                c2,
                c1,
                gamma: s.gamma,
                nu: s.nu,
                xi: s.xi,
            });
        }
    }
    out.ok_or(Error::NotConverged {
        what: "min_over_c1",
        evals: grid.len(),
    })
}

/// Error probability attached to a dual `nu`: `1 - erfc(nu/sqrt 2)/2`.
pub fn perr_from_nu(nu: f64) -> f64 {
    norm_cdf(nu)
}

/// Normalized residual of the box (polytope) relaxation and its minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolytopePrediction {
    pub r_plt: f64,
    pub point: RdtPoint,
    pub perr: f64,
}

fn c2_body_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (1..50).map(|i| i as f64 / 50.0).collect();
    g.extend([0.99, 0.995, 0.999]);
    g
}

/// `r_plt = min_{c2} min_{c1} max_{gamma, nu} xi_rd`.
pub fn r_plt_theory(params: &RdtParams) -> Result<PolytopePrediction> {
    let grid = c2_body_grid();
    let mut values = Vec::with_capacity(grid.len());
    for &c2 in &grid {
        values.push(min_over_c1(params, c2)?.xi);
    }
    let i = (0..values.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    let lo = grid[i.saturating_sub(1)];
    let hi = grid[(i + 1).min(grid.len() - 1)];
    let settings = OptimizerSettings::default().with_max_evals(300);
    let opt = minimize_scalar(
        |c2| min_over_c1(params, c2).map(|p| p.xi).unwrap_or(f64::INFINITY),
        lo,
        hi,
        &settings,
    )?;
    let point = min_over_c1(params, opt.x)?;
    Ok(PolytopePrediction {
        r_plt: point.xi,
        point,
        perr: perr_from_nu(point.nu),
    })
}

/// Predicted CLuP fixed point for radius `r_sc * r_plt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClupPrediction {
    pub r_sc: f64,
    pub r_plt: f64,
    pub point: RdtPoint,
    pub perr: f64,
    /// Every `c2` in `[c2_plt, 1)` where the reduced curve meets the radius.
    pub roots: Vec<f64>,
    /// The radius is never reached below `c2 = 1`; `point` sits at the grid end.
    pub saturated: bool,
}

const C2_CEILING: f64 = 1.0 - 1e-9;

/// `c2` grid on `[lo, C2_CEILING]`: uniform plus a geometric approach to 1.
fn c2_grid_to_one(lo: f64, body: usize, tail: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..body).map(|i| lo + (1.0 - lo) * i as f64 / body as f64).collect();
    let start = ((1.0 - lo) / body as f64).ln();
    let end = (1.0 - C2_CEILING).ln();
    for k in 0..tail {
        g.push(1.0 - (start + (end - start) * (k as f64 + 1.0) / tail as f64).exp());
    }
    g.dedup();
    g
}

pub fn clup_rdt_predict(params: &RdtParams, r_sc: f64) -> Result<ClupPrediction> {
    let plt = r_plt_theory(params)?;
    clup_rdt_predict_with(params, &plt, r_sc)
}

/// As [`clup_rdt_predict`] with a precomputed polytope solution.
pub fn clup_rdt_predict_with(params: &RdtParams, plt: &PolytopePrediction, r_sc: f64) -> Result<ClupPrediction> {
    if !(r_sc >= 1.0) || !r_sc.is_finite() {
        return Err(Error::InvalidConfig(format!("r_sc must be >= 1, got {r_sc}")));
    }
    let target = r_sc * plt.r_plt;
    if target - plt.r_plt <= 1e-14 * plt.r_plt {
        return Ok(ClupPrediction {
            r_sc,
            r_plt: plt.r_plt,
            point: plt.point,
            perr: plt.perr,
            roots: vec![plt.point.c2],
            saturated: false,
        });
    }
    let grid = c2_grid_to_one(plt.point.c2, 48, 16);
    let mut values = Vec::with_capacity(grid.len());
    for &c2 in &grid {
        values.push(min_over_c1(params, c2)?.xi - target);
    }
    let settings = OptimizerSettings::default().with_x_tol(1e-13);
    let mut roots = Vec::new();
    for k in 0..grid.len() - 1 {
        if values[k] == 0.0 {
            roots.push(grid[k]);
        } else if values[k] * values[k + 1] < 0.0 {
            let root = find_root(
                |c2| min_over_c1(params, c2).map(|p| p.xi - target).unwrap_or(f64::NAN),
                grid[k],
                grid[k + 1],
                &settings,
            )?;
            roots.push(root);
        }
    }
    let (c2, saturated) = match roots.last() {
        Some(&c2) => (c2, false),
        None => (*grid.last().unwrap_or(&C2_CEILING), true),
    };
    let point = min_over_c1(params, c2)?;
    Ok(ClupPrediction {
        r_sc,
        r_plt: plt.r_plt,
        point,
        perr: perr_from_nu(point.nu),
        roots,
        saturated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanAxis {
    /// Saddle value along `c1` at fixed `c2`.
    C1,
    /// Value minimized over `c1`, along `c2`.
    C2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveScan {
    pub axis: ScanAxis,
    pub fixed_value: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub local_minima: Vec<(f64, f64)>,
}

impl CurveScan {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let name = match self.axis {
            ScanAxis::C1 => "c1",
            ScanAxis::C2 => "c2",
        };
        writeln!(w, "{name},xi")?;
        for (x, v) in self.grid.iter().zip(&self.values) {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    }
}

/// Tabulates the reduced curve on `grid` and lists its refined local minima.
pub fn scan_xi(params: &RdtParams, axis: ScanAxis, fixed_value: f64, grid: &[f64]) -> Result<CurveScan> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidConfig("scan grid must be strictly increasing with >= 2 points".into()));
    }
    let mut values = Vec::with_capacity(grid.len());
    match axis {
        ScanAxis::C1 => {
            let mut warm = DEFAULT_START;
            for &c1 in grid {
                let s = xi_rd_saddle_from(params, fixed_value, c1, warm)?;
                warm = (s.gamma, s.nu);
                values.push(s.xi);
            }
            let c2 = fixed_value;
            let local_minima = refine_grid_minima(grid, &values, |c1| {
                xi_rd_saddle(params, c2, c1).map(|s| s.xi).unwrap_or(f64::INFINITY)
            })?;
            Ok(CurveScan {
                axis,
                fixed_value,
                grid: grid.to_vec(),
                values,
                local_minima,
            })
        }
        ScanAxis::C2 => {
            for &c2 in grid {
                values.push(min_over_c1(params, c2)?.xi);
            }
            let local_minima = refine_grid_minima(grid, &values, |c2| {
                min_over_c1(params, c2).map(|p| p.xi).unwrap_or(f64::INFINITY)
            })?;
            Ok(CurveScan {
                axis,
                fixed_value,
                grid: grid.to_vec(),
                values,
                local_minima,
            })
        }
    }
}

/// A stationary point of the radius-constrained Lagrangian
/// `-sqrt(c2) + gamma1 (xi_rd - r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoint {
    pub xi: f64,
    pub c2: f64,
    pub c1: f64,
    pub nu: f64,
    pub gamma: f64,
    pub gamma1: f64,
    pub grad_norm: f64,
}

/// `nu` forced by stationarity in `c1`.
pub fn nu_closure(params: &RdtParams, c2: f64, c1: f64) -> Result<f64> {
    Ok(-params.alpha.sqrt() / residual_sqrt(params, c2, c1)?)
}

/// `gamma1` forced by stationarity in `c2`.
pub fn gamma1_closure(c2: f64, gamma: f64, nu: f64) -> f64 {
    1.0 / (2.0 * c2.sqrt() * (-nu / 2.0 - gamma))
}

/// Residual of the reduced system in `(c2, c1, gamma)` once `nu` and
/// `gamma1` are eliminated: saddle conditions in `nu` and `gamma`, and the
/// radius constraint.
fn reduced_system(params: &RdtParams, r: f64, z: [f64; 3]) -> Option<[f64; 3]> {
    let [c2, c1, gamma] = z;
    if !(gamma > 0.0) || !(c2 > 0.0) {
        return None;
    }
    let nu = nu_closure(params, c2, c1).ok()?;
    let m = coordinate_moments(gamma, nu);
    let xi = xi_rd(params, c2, c1, gamma, nu).ok()?;
    let f = [m.mean - c1, m.second - c2, xi - r];
    f.iter().all(|v| v.is_finite()).then_some(f)
}

fn solve3(j: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(j);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut x = [0.0; 3];
    for (k, xk) in x.iter_mut().enumerate() {
        let mut m = j;
        for i in 0..3 {
            m[i][k] = b[i];
        }
        *xk = det(m) / d;
    }
    Some(x)
}

/// Newton on the reduced system with a central-difference Jacobian and
/// backtracking on the residual norm.
fn polish_stationary(params: &RdtParams, r: f64, start: [f64; 3]) -> Option<([f64; 3], f64)> {
    let norm = |f: [f64; 3]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut z = start;
    let mut f = reduced_system(params, r, z)?;
    for _ in 0..100 {
        let fnorm = norm(f);
        if fnorm <= 1e-13 {
            break;
        }
        let mut j = [[0.0; 3]; 3];
        for k in 0..3 {
            let h = 1e-7 * z[k].abs().max(1e-3);
            let mut zp = z;
            let mut zm = z;
            zp[k] += h;
            zm[k] -= h;
            let fp = reduced_system(params, r, zp)?;
            let fm = reduced_system(params, r, zm)?;
            for i in 0..3 {
                j[i][k] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let d = solve3(j, [-f[0], -f[1], -f[2]])?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let trial = [z[0] + t * d[0], z[1] + t * d[1], z[2] + t * d[2]];
            if let Some(ft) = reduced_system(params, r, trial) {
                if norm(ft) < fnorm {
                    z = trial;
                    f = ft;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let fnorm = norm(f);
    (fnorm <= 1e-9).then_some((z, fnorm))
}

/// All points where the saddle value is stationary in `c1` and equals `r`.
///
/// A `c2` grid is swept; at each `c2` the `c1`-stationary points (roots of
/// `nu_hat + sqrt(alpha)/sqrt(1 - 2c1 + c2 + sigma^2)`) are located, nearby
/// roots on consecutive `c2` values are linked into branches, and every
/// branch crossing of `r` seeds a Newton polish of the reduced system.
pub fn find_stationary_points(params: &RdtParams, r: f64) -> Result<Vec<StationaryPoint>> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidConfig(format!("radius must be positive, got {r}")));
    }
    let c2_grid = c2_grid_to_one(0.01, 120, 12);
    let settings = OptimizerSettings::default().with_x_tol(1e-13);
    // per c2: (c1, xi, gamma)
    let mut branches: Vec<Vec<(f64, f64, f64)>> = Vec::with_capacity(c2_grid.len());
    for &c2 in &c2_grid {
        let grid = c1_grid(c2, 100, 24);
        let mut warm = DEFAULT_START;
        let mut gvals = Vec::with_capacity(grid.len());
        let mut warms = Vec::with_capacity(grid.len());
        for &c1 in &grid {
            let s = xi_rd_saddle_from(params, c2, c1, warm)?;
            warm = (s.gamma, s.nu);
            warms.push(warm);
            gvals.push(s.nu - nu_closure(params, c2, c1)?);
        }
        let mut here = Vec::new();
        for k in 0..grid.len() - 1 {
            if gvals[k] * gvals[k + 1] < 0.0 {
                let w = warms[k];
                let c1 = find_root(
                    |c1| {
                        let s = xi_rd_saddle_from(params, c2, c1, w);
                        match (s, nu_closure(params, c2, c1)) {
                            (Ok(s), Ok(nc)) => s.nu - nc,
                            _ => f64::NAN,
                        }
                    },
                    grid[k],
                    grid[k + 1],
                    &settings,
                )?;
                let s = xi_rd_saddle_from(params, c2, c1, w)?;
                here.push((c1, s.xi, s.gamma));
            }
        }
        branches.push(here);
    }

    let mut out: Vec<StationaryPoint> = Vec::new();
    for k in 0..c2_grid.len() - 1 {
        for &(c1a, xa, ga) in &branches[k] {
            let Some(&(c1b, xb, gb)) = branches[k + 1]
                .iter()
                .min_by(|p, q| (p.0 - c1a).abs().total_cmp(&(q.0 - c1a).abs()))
            else {
                continue;
            };
            if (c1b - c1a).abs() > 0.05 || (xa - r) * (xb - r) > 0.0 {
                continue;
            }
            let t = if xb != xa { (r - xa) / (xb - xa) } else { 0.5 };
            let lerp = |a: f64, b: f64| a + t * (b - a);
            let start = [lerp(c2_grid[k], c2_grid[k + 1]), lerp(c1a, c1b), lerp(ga, gb)];
            let Some(([c2, c1, gamma], grad_norm)) = polish_stationary(params, r, start) else {
                continue;
            };
            let nu = nu_closure(params, c2, c1)?;
            let p = StationaryPoint {
                xi: xi_rd(params, c2, c1, gamma, nu)?,
                c2,
                c1,
                nu,
                gamma,
                gamma1: gamma1_closure(c2, gamma, nu),
                grad_norm,
            };
            let dup = out.iter().any(|q| {
                (q.c2 - p.c2).abs() < 1e-6 && (q.c1 - p.c1).abs() < 1e-6 && (q.gamma - p.gamma).abs() < 1e-6
            });
            if !dup {
                out.push(p);
            }
        }
    }
    out.sort_by(|a, b| a.c2.total_cmp(&b.c2));
    Ok(out)
}

/// Largest radius multiplier that keeps the CLuP radius below the ML value.
pub fn r_sc_upper_limit(params: &RdtParams, xi_ml: f64) -> Result<f64> {
    let plt = r_plt_theory(params)?;
    r_sc_upper_limit_with(&plt, xi_ml)
}

pub fn r_sc_upper_limit_with(plt: &PolytopePrediction, xi_ml: f64) -> Result<f64> {
    if !(xi_ml > 0.0) || !xi_ml.is_finite() {
        return Err(Error::Domain(format!("ML objective must be positive, got {xi_ml}")));
    }
    Ok(xi_ml / plt.r_plt)
}

/// Radius multiplier minimizing the predicted error probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalRadius {
    pub r_sc: f64,
    pub perr: f64,
    pub point: RdtPoint,
    pub r_sc_upper: f64,
}

/// Minimizes the predicted `nu_hat` over `r_sc in [1, r_sc_upper_limit]`.
///
/// The prediction is parametrized by its fixed point `c2` rather than by
/// `r_sc` (the map `c2 -> r_sc` is increasing on `[c2_plt, 1)`), with
/// `c2 = 1 - (1 - c2_plt) e^{-t}` so the approach to `c2 = 1` is resolved.
pub fn r_sc_optimal_perr(params: &RdtParams) -> Result<OptimalRadius> {
    let plt = r_plt_theory(params)?;
    let ml = super::ml::ml_minimize(params)?;
    r_sc_optimal_perr_with(params, &plt, ml.xi_global)
}

pub fn r_sc_optimal_perr_with(params: &RdtParams, plt: &PolytopePrediction, xi_ml: f64) -> Result<OptimalRadius> {
    let upper = r_sc_upper_limit_with(plt, xi_ml)?;
    let gap0 = 1.0 - plt.point.c2;
    let c2_of = |t: f64| 1.0 - gap0 * (-t).exp();
    let t_max = (gap0 / (1.0 - C2_CEILING)).ln();
    let n = 64;
    let ts: Vec<f64> = (0..=n).map(|i| t_max * i as f64 / n as f64).collect();
    let mut pts = Vec::with_capacity(ts.len());
    for &t in &ts {
        let p = if t == 0.0 { plt.point } else { min_over_c1(params, c2_of(t))? };
        if p.xi > xi_ml {
            break;
        }
        pts.push(p);
    }
    // admissible range ends where the curve reaches the ML value
    let mut t_end = ts[pts.len() - 1];
    if pts.len() < ts.len() {
        let target = xi_ml;
        let settings = OptimizerSettings::default().with_x_tol(1e-12);
        t_end = find_root(
            |t| min_over_c1(params, c2_of(t)).map(|p| p.xi - target).unwrap_or(f64::NAN),
            ts[pts.len() - 1],
            ts[pts.len()],
            &settings,
        )?;
    }
    let i = (0..pts.len()).min_by(|&a, &b| pts[a].nu.total_cmp(&pts[b].nu)).unwrap_or(0);
    let lo = ts[i.saturating_sub(1)];
    let hi = if i + 1 < pts.len() { ts[i + 1] } else { t_end };
    let settings = OptimizerSettings::default().with_x_tol(1e-9).with_max_evals(300);
    let opt = minimize_scalar(
        |t| min_over_c1(params, c2_of(t)).map(|p| p.nu).unwrap_or(f64::INFINITY),
        lo,
        hi.max(lo),
        &settings,
    )?;
    let mut point = min_over_c1(params, c2_of(opt.x))?;
    if point.nu > pts[i].nu {
        point = pts[i];
    }
    let end = min_over_c1(params, c2_of(t_end))?;
    if end.nu < point.nu {
        point = end;
    }
    Ok(OptimalRadius {
        r_sc: point.xi / plt.r_plt,
        perr: perr_from_nu(point.nu),
        point,
        r_sc_upper: upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_middle_branch_matches_printed_form() {
        for &(g, v) in &[(0.3, -1.0), (0.2, 0.5), (0.1, -2.0), (0.05, 1.0), (0.26, 0.0)] {
            let printed = e_fbox1(g, v).unwrap();
            assert!((e_fbox1_stable(g, v) - printed).abs() < 1e-12, "gamma={g} nu={v}");
        }
        // both regimes agree at the switch
        let below = coordinate_moments(0.25 - 1e-12, -0.7);
        let above = coordinate_moments(0.25, -0.7);
        assert!((below.second - above.second).abs() < 1e-10);
        assert!((below.hessian[1][1] - above.hessian[1][1]).abs() < 1e-8);
    }

    fn p10() -> RdtParams {
        RdtParams::from_snr_db(0.8, 10.0).unwrap()
    }

    #[test]
    fn f_box1_branches() {
        assert_eq!(f_box1(0.0, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(f_box1(2.0, 1.0, 0.0).unwrap(), -1.0);
        assert_eq!(f_box1(5.0, 1.0, 0.0).unwrap(), -4.0);
        assert!(f_box1(0.0, 0.0, 0.0).is_err());
        assert!(f_box1(0.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn f_box1_is_the_coordinate_minimum() {
        for &(h, g, v) in &[(0.3, 0.7, -0.2), (-4.0, 0.5, 1.0), (2.5, 2.0, -0.1)] {
            let x = optimal_x_coordinate(h, g, v);
            assert!((f_box1(h, g, v).unwrap() - ((h + v) * x + g * x * x)).abs() < 1e-14);
        }
    }

    #[test]
    fn optimal_coordinate_examples() {
        assert_eq!(optimal_x_coordinate(0.0, 1.0, 0.0), 0.0);
        assert_eq!(optimal_x_coordinate(-5.0, 1.0, 0.0), 1.0);
        assert_eq!(optimal_x_coordinate(1.0, 1.0, 0.0), -0.5);
    }

    #[test]
    fn e_fbox1_large_gamma_limit() {
        assert!((e_fbox1(100.0, 0.0).unwrap() + 0.0025).abs() < 1e-5);
        assert!(e_fbox1(0.0, 1.0).is_err());
    }

    #[test]
    fn moments_match_finite_differences() {
        for &(g, v) in &[(0.7, -1.3), (1.1, 0.4), (0.3, -2.6), (2.5, 3.0)] {
            let m = coordinate_moments(g, v);
            let h = 1e-5;
            let f = |g: f64, v: f64| e_fbox1(g, v).unwrap();
            let dv = (f(g, v + h) - f(g, v - h)) / (2.0 * h);
            let dg = (f(g + h, v) - f(g - h, v)) / (2.0 * h);
            assert!((dv - m.mean).abs() < 1e-8, "{dv} {}", m.mean);
            assert!((dg - m.second).abs() < 1e-8, "{dg} {}", m.second);
            let mv = |g: f64, v: f64| coordinate_moments(g, v);
            let hvv = (mv(g, v + h).mean - mv(g, v - h).mean) / (2.0 * h);
            let hvg = (mv(g + h, v).mean - mv(g - h, v).mean) / (2.0 * h);
            let hgg = (mv(g + h, v).second - mv(g - h, v).second) / (2.0 * h);
            assert!((hvv - m.hessian[0][0]).abs() < 1e-7);
            assert!((hvg - m.hessian[0][1]).abs() < 1e-7);
            assert!((hgg - m.hessian[1][1]).abs() < 1e-7);
        }
    }

    #[test]
    fn xi_rd_at_printed_stationary_points() {
        let p = p10();
        let a = xi_rd(&p, 0.93035, 0.94857, 0.68036, -2.450658).unwrap();
        let b = xi_rd(&p, 0.46075, 0.56459, 1.10981, -1.361508).unwrap();
        assert!((a - 0.225173).abs() < 1e-5, "{a}");
        assert!((b - 0.225173).abs() < 1e-5, "{b}");
        let nu = nu_closure(&p, 0.93035, 0.94857).unwrap();
        assert!((nu + 2.45066).abs() < 1e-4, "{nu}");
        assert!(xi_rd(&p, 0.0, 2.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn saddle_recovers_printed_duals() {
        let p = p10();
        let s = xi_rd_saddle(&p, 0.93035, 0.94857).unwrap();
        assert!((s.gamma - 0.68036).abs() < 1e-3 && (s.nu + 2.450658).abs() < 1e-3, "{s:?}");
        assert!(s.grad_norm <= 1e-8);
        for start in [(0.1, 0.0), (5.0, -5.0), (0.5, 2.0), (2.0, -0.1), (0.05, -4.0)] {
            let t = xi_rd_saddle_from(&p, 0.93035, 0.94857, start).unwrap();
            assert!((t.xi - s.xi).abs() < 1e-8 * s.xi.abs().max(1.0));
        }
    }

    #[test]
    fn saddle_rejects_unbounded_region() {
        let p = p10();
        assert!(xi_rd_saddle(&p, 0.25, 0.6).is_err());
        assert!(xi_rd_saddle(&p, 1.0, 0.5).is_err());
    }

    #[test]
    fn polytope_and_degenerate_prediction() {
        let p = RdtParams::from_snr_db(0.8, 12.0).unwrap();
        let plt = r_plt_theory(&p).unwrap();
        assert!((0.0..=0.5).contains(&plt.perr));
        let pred = clup_rdt_predict_with(&p, &plt, 1.0).unwrap();
        assert!((pred.point.c2 - plt.point.c2).abs() < 1e-6);
        assert!((pred.perr - plt.perr).abs() < 1e-6);
        assert!(clup_rdt_predict_with(&p, &plt, 0.9).is_err());
    }

    #[test]
    fn prediction_at_12db() {
        let p = RdtParams::from_snr_db(0.8, 12.0).unwrap();
        let pred = clup_rdt_predict(&p, 1.1).unwrap();
        assert!((pred.point.c2 - 0.8628).abs() < 1e-3, "{pred:?}");
        assert!((pred.point.c1 - 0.9105).abs() < 1e-3);
        assert!((pred.perr / 2.886e-3 - 1.0).abs() < 0.05);
        assert!(!pred.saturated);
    }

    #[test]
    fn upper_limit_identity() {
        let p = RdtParams::from_snr_db(0.8, 12.0).unwrap();
        let plt = r_plt_theory(&p).unwrap();
        assert!((r_sc_upper_limit_with(&plt, plt.r_plt).unwrap() - 1.0).abs() < 1e-15);
        assert!(r_sc_upper_limit_with(&plt, 0.22457).unwrap() > 1.3);
        assert!(r_sc_upper_limit_with(&plt, 0.0).is_err());
    }

    #[test]
    fn scan_rejects_bad_grid() {
        assert!(scan_xi(&p10(), ScanAxis::C1, 0.9, &[0.5, 0.4]).is_err());
    }

    #[test]
    fn scan_csv_layout() {
        let s = CurveScan {
            axis: ScanAxis::C2,
            fixed_value: 0.0,
            grid: vec![0.5, 0.6],
            values: vec![0.3, 0.25],
            local_minima: vec![],
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "c2,xi\n0.5,0.3\n0.6,0.25\n");
    }
}
