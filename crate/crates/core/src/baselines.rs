//! Reference detectors: the polytope (box) and ball relaxations followed by
//! sign rounding, and a greedy bit-flipping search for the ML estimate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inner_solver::SolverContext;
use crate::model::{random_sign_vector, rng_from_seed, sign_round, ProblemInstance};

/// A sign-valued estimate with the residual of the underlying optimization.
#[derive(Debug, Clone)]
pub struct Detection {
    pub x_hat: DVector<f64>,
    pub residual: f64,
}

/// Sign rounding of the box-constrained least-squares solution. `residual`
/// is the box optimum, not the residual of the rounded vector.
pub fn polytope_detect(instance: &ProblemInstance) -> Result<Detection> {
    let ctx = SolverContext::new(instance);
    polytope_detect_with(&ctx)
}

pub fn polytope_detect_with(ctx: &SolverContext) -> Result<Detection> {
    let b = ctx.min_box_residual()?;
    Ok(Detection {
        x_hat: sign_round(&b.x_plt),
        residual: b.r_min,
    })
}

/// Sign rounding of the least-squares solution over the unit ball.
pub fn ball_detect(instance: &ProblemInstance) -> Result<Detection> {
    let ctx = SolverContext::new(instance);
    let x = ctx.min_residual_unit_ball()?;
    Ok(Detection {
        residual: instance.residual_norm(&x),
        x_hat: sign_round(&x),
    })
}

/// Outcome of one steepest-descent bit-flipping pass.
#[derive(Debug, Clone)]
pub struct LocalSearch {
    pub x: DVector<f64>,
    /// Residual norm before the first flip and after every accepted flip.
    pub residuals: Vec<f64>,
}

/// Flips the coordinate with the largest residual decrease until no flip
/// helps. `A'e` is kept up to date from the columns of `A'A`, so a pass
/// costs `O(n)` per flip after an `O(mn)` start.
pub fn local_search(instance: &ProblemInstance, gram: &DMatrix<f64>, x_init: &DVector<f64>) -> LocalSearch {
    let n = instance.n;
    let mut x = x_init.clone();
    let e = &instance.y - &instance.a * &x;
    let mut res_sq = e.norm_squared();
    let mut ate = instance.a.tr_mul(&e);
    let mut residuals = vec![res_sq.sqrt()];
    // flipping i changes |e|^2 by 4 x_i (A'e)_i + 4 x_i^2 |a_i|^2
    let tol = 1e-12 * res_sq.max(1e-300);
    for _ in 0..(100 * n.max(1)) {
        let mut best = (usize::MAX, -tol);
        for i in 0..n {
            let change = 4.0 * x[i] * ate[i] + 4.0 * x[i] * x[i] * gram[(i, i)];
            if change < best.1 {
                best = (i, change);
            }
        }
        if best.0 == usize::MAX {
            break;
        }
        let i = best.0;
        ate.axpy(2.0 * x[i], &gram.column(i), 1.0);
        res_sq += best.1;
        x[i] = -x[i];
        residuals.push(res_sq.max(0.0).sqrt());
    }
    LocalSearch { x, residuals }
}

/// Best of `restarts` local searches: the first from `x_init`, the rest
/// from sign vectors drawn from `seed`.
pub fn bit_flip_ml(instance: &ProblemInstance, x_init: &DVector<f64>, restarts: usize, seed: u64) -> Result<Detection> {
    if restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be >= 1".into()));
    }
    if x_init.len() != instance.n {
        return Err(Error::InvalidDimension(format!("x_init has {} entries, n = {}", x_init.len(), instance.n)));
    }
    let gram = instance.a.tr_mul(&instance.a);
    let mut rng = rng_from_seed(seed);
    let mut best: Option<Detection> = None;
    for k in 0..restarts {
        let start = if k == 0 {
            sign_round(x_init)
        } else {
            random_sign_vector(instance.n, &mut rng)
        };
        let ls = local_search(instance, &gram, &start);
        let residual = instance.residual_norm(&ls.x);
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(Detection { x_hat: ls.x, residual });
        }
    }
    Ok(best.expect("restarts >= 1"))
}
