//! Damped Newton ascent for smooth concave functions of two variables.

use crate::error::{Error, Result};

/// Value, gradient and Hessian of a twice-differentiable function at a point.
#[derive(Debug, Clone, Copy)]
pub struct Local2 {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ascent2 {
    pub x: [f64; 2],
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AscentSettings {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Iterates leaving this box count as divergence (the supremum is infinite).
    pub escape: f64,
}

impl Default for AscentSettings {
    fn default() -> Self {
        AscentSettings {
            grad_tol: 1e-12,
            max_iter: 200,
            escape: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AscentOutcome {
    Converged(Ascent2),
    /// The iterates ran off to infinity while the objective kept growing.
    Unbounded,
}

/// Maximizes a concave function with Levenberg-damped Newton steps and an
/// Armijo backtracking line search. `feasible` rejects trial points outside the
/// function's domain (the search simply backtracks away from them).
pub fn maximize_concave_2d<E, D>(
    mut eval: E,
    feasible: D,
    start: [f64; 2],
    settings: &AscentSettings,
) -> Result<AscentOutcome>
where
    E: FnMut([f64; 2]) -> Local2,
    D: Fn([f64; 2]) -> bool,
{
    let mut x = start;
    let mut cur = eval(x);
    if !cur.value.is_finite() {
        return Err(Error::Domain(format!("ascent started at non-finite point {start:?}")));
    }
    for it in 0..settings.max_iter {
        let g = cur.grad;
        let gn = g[0].hypot(g[1]);
        if gn <= settings.grad_tol {
            return Ok(AscentOutcome::Converged(Ascent2 {
                x,
                value: cur.value,
                grad_norm: gn,
                iterations: it,
            }));
        }
        if x[0].abs().max(x[1].abs()) > settings.escape {
            return Ok(AscentOutcome::Unbounded);
        }

        // (-H + lambda I) d = g
        let h = cur.hess;
        let scale = h[0][0].abs().max(h[1][1].abs()).max(1e-300);
        let mut lambda = 0.0;
        let mut step = None;
        for _ in 0..40 {
            let a = -h[0][0] + lambda;
            let b = -h[0][1];
            let c = -h[1][1] + lambda;
            let det = a * c - b * b;
            if a > 0.0 && c > 0.0 && det > 1e-14 * a * c {
                let d = [(c * g[0] - b * g[1]) / det, (a * g[1] - b * g[0]) / det];
                if d[0].is_finite() && d[1].is_finite() {
                    step = Some(d);
                    break;
                }
            }
            lambda = if lambda == 0.0 { 1e-10 * scale.max(gn) } else { lambda * 10.0 };
        }
        let d = step.unwrap_or([g[0], g[1]]);
        let slope = g[0] * d[0] + g[1] * d[1];

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = [x[0] + t * d[0], x[1] + t * d[1]];
            if feasible(trial) {
                let next = eval(trial);
                if next.value.is_finite() && next.value >= cur.value + 1e-4 * t * slope {
                    x = trial;
                    cur = next;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // No measurable progress is possible in floating point: accept the
            // current point if it is nearly stationary.
            if gn <= settings.grad_tol.max(1e-9) {
                return Ok(AscentOutcome::Converged(Ascent2 {
                    x,
                    value: cur.value,
                    grad_norm: gn,
                    iterations: it,
                }));
            }
            return Err(Error::NotConverged {
                what: "maximize_concave_2d line search",
                evals: it,
            });
        }
    }
    let gn = cur.grad[0].hypot(cur.grad[1]);
    if gn <= settings.grad_tol.max(1e-9) {
        return Ok(AscentOutcome::Converged(Ascent2 {
            x,
            value: cur.value,
            grad_norm: gn,
            iterations: settings.max_iter,
        }));
    }
    Err(Error::NotConverged {
        what: "maximize_concave_2d",
        evals: settings.max_iter,
    })
}
