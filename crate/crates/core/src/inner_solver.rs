//! The convex program solved inside every CLuP iteration:
//!
//! ```text
//! maximize w'x  subject to  |y - A x| <= r,  |x_i| <= 1/sqrt(n),  a_j'x >= b_j
//! ```
//!
//! The main path is an active-set method. On a fixed face (a choice of free
//! coordinates, coordinates pinned at a bound, and active half-spaces) the
//! optimality conditions with the residual constraint active have a closed
//! form, so each step costs one Cholesky factorization of the free block of
//! `A'A`. Faces are updated primal-dual style until the KKT conditions hold.
//! When that stalls (cycling, singular faces, a face that cannot reach the
//! radius) a Douglas-Rachford splitting between the box and the residual
//! ball takes over, periodically handing its active set back to the
//! active-set polish.

use std::collections::HashSet;
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemInstance;

/// `normal' x >= offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: DVector<f64>, offset: f64) -> Self {
        Halfspace { normal, offset }
    }

    fn slack(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.offset
    }
}

/// One inner problem: maximize `w'x` (equivalently minimize `-w'x`).
#[derive(Debug, Clone)]
pub struct InnerProblem<'a> {
    pub instance: &'a ProblemInstance,
    pub w: DVector<f64>,
    pub r: f64,
    pub extra_halfspaces: Vec<Halfspace>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol_feas: f64,
    pub tol_kkt: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_feas: 1e-8,
            tol_kkt: 1e-8,
            max_iter: 20_000,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_feas > 0.0) || !(self.tol_kkt > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig(format!("invalid solver settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

/// Where a coordinate sits on the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bound {
    Lower,
    Free,
    Upper,
}

/// A face of the feasible set: coordinate bounds plus active half-spaces.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActiveSet {
    pub coords: Vec<Bound>,
    pub halfspaces: Vec<bool>,
}

impl ActiveSet {
    /// Reads the face off a point: coordinates within `tol` of a bound are
    /// pinned, half-spaces within `tol` of equality are active.
    pub fn from_point(x: &DVector<f64>, bound: f64, halfspaces: &[Halfspace], tol: f64) -> Self {
        let coords = x
            .iter()
            .map(|&v| {
                if v >= bound - tol {
                    Bound::Upper
                } else if v <= -bound + tol {
                    Bound::Lower
                } else {
                    Bound::Free
                }
            })
            .collect();
        ActiveSet {
            coords,
            halfspaces: halfspaces.iter().map(|h| h.slack(x) <= tol).collect(),
        }
    }

    pub fn num_free(&self) -> usize {
        self.coords.iter().filter(|&&b| b == Bound::Free).count()
    }

    fn with_halfspaces(mut self, k: usize) -> Self {
        self.halfspaces.resize(k, false);
        self
    }
}

/// Result of one inner solve.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub x_star: DVector<f64>,
    /// `-w' x_star`.
    pub objective: f64,
    pub residual: f64,
    /// Active-set steps plus splitting iterations.
    pub iterations: usize,
    pub status: SolverStatus,
    pub kkt_residual: f64,
    /// Multiplier of the residual constraint.
    pub multiplier: f64,
    pub active: ActiveSet,
    /// Fixed-point residual of every splitting iteration (empty when the
    /// active-set path alone succeeded).
    pub merit: Vec<f64>,
}

/// Minimizer of `|y - A x|` over the box.
#[derive(Debug, Clone)]
pub struct BoxResidual {
    pub x_plt: DVector<f64>,
    pub r_min: f64,
    pub iterations: usize,
    pub active: ActiveSet,
}

struct ThinSvd {
    /// Right singular vectors as columns, `n x k`.
    v: DMatrix<f64>,
    sv: DVector<f64>,
    /// `U' y`.
    c: DVector<f64>,
    /// Part of `|y|^2` outside the range of `A`.
    perp_sq: f64,
}

/// Solution on one face.
struct FaceSolution {
    x: DVector<f64>,
    mu: f64,
    eta: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Objective<'a> {
    /// `max w'x` on the residual ball.
    Linear { w: &'a DVector<f64>, r: f64, halfspaces: &'a [Halfspace] },
    /// `min |y - A x|^2 / 2`.
    LeastSquares,
}

/// Per-instance cache: `A'A`, `A'y`, and lazily a thin SVD and the polytope
/// solution. Bind one context to one instance and reuse it for every inner
/// solve on that instance.
pub struct SolverContext<'a> {
    inst: &'a ProblemInstance,
    bound: f64,
    gram: DMatrix<f64>,
    aty: DVector<f64>,
    svd: OnceLock<ThinSvd>,
    box_min: OnceLock<BoxResidual>,
}

const POLISH_STEPS: usize = 60;
const POLISH_EVERY: usize = 25;

impl<'a> SolverContext<'a> {
    pub fn new(inst: &'a ProblemInstance) -> Self {
        SolverContext {
            inst,
            bound: inst.bound(),
            gram: inst.a.tr_mul(&inst.a),
            aty: inst.a.tr_mul(&inst.y),
            svd: OnceLock::new(),
            box_min: OnceLock::new(),
        }
    }

    pub fn instance(&self) -> &ProblemInstance {
        self.inst
    }

    fn svd(&self) -> &ThinSvd {
        self.svd.get_or_init(|| {
            let svd = self.inst.a.clone().svd(true, true);
            let u = svd.u.expect("requested U");
            let v = svd.v_t.expect("requested V'").transpose();
            let c = u.tr_mul(&self.inst.y);
            let perp_sq = (&self.inst.y - &u * &c).norm_squared();
            ThinSvd {
                v,
                sv: svd.singular_values,
                c,
                perp_sq,
            }
        })
    }

    /// Gradient of the Lagrangian without the box multipliers.
    fn lagrangian_grad(&self, x: &DVector<f64>, sol_mu: f64, sol_eta: &[f64], obj: Objective) -> DVector<f64> {
        let mut g = (&self.gram * x - &self.aty) * sol_mu;
        if let Objective::Linear { w, halfspaces, .. } = obj {
            g -= w;
            for (h, &e) in halfspaces.iter().zip(sol_eta) {
                if e != 0.0 {
                    g.axpy(-e, &h.normal, 1.0);
                }
            }
        }
        g
    }

    /// Closed-form optimum on a face; `None` when the face is degenerate or
    /// cannot reach the radius.
    fn solve_face(&self, set: &ActiveSet, obj: Objective) -> Option<FaceSolution> {
        let n = self.inst.n;
        let s = self.bound;
        let free: Vec<usize> = (0..n).filter(|&i| set.coords[i] == Bound::Free).collect();
        let mut x = DVector::from_fn(n, |i, _| match set.coords[i] {
            Bound::Upper => s,
            Bound::Lower => -s,
            Bound::Free => 0.0,
        });
        let k = free.len();
        // right-hand side A_F'(y - A_B x_B) = (A'y - A'A x_B)_F
        let gx = &self.gram * &x;
        let rhs = DVector::from_fn(k, |j, _| self.aty[free[j]] - gx[free[j]]);
        let g = DMatrix::from_fn(k, k, |i, j| self.gram[(free[i], free[j])]);
        // more free coordinates than rows means a rank-deficient block
        let chol = if k > 0 && k <= self.inst.m { Cholesky::new(g) } else { None };
        if chol.is_none() && k > 0 {
            // Singular free block: only least squares has a meaningful
            // answer, the minimum-norm solution of A_F x_F = y - A_B x_B.
            if !matches!(obj, Objective::LeastSquares) {
                return None;
            }
            let af = DMatrix::from_fn(self.inst.m, k, |r, c| self.inst.a[(r, free[c])]);
            let rest = &self.inst.y - &self.inst.a * &x;
            let sol = af.svd(true, true).solve(&rest, 1e-12).ok()?;
            for (j, &i) in free.iter().enumerate() {
                x[i] = sol[j];
            }
            return Some(FaceSolution { x, mu: 1.0, eta: Vec::new() });
        }
        let solve = |b: &DVector<f64>| chol.as_ref().map(|c| c.solve(b)).unwrap_or_else(|| DVector::zeros(0));
        let x_ls = solve(&rhs);
        if x_ls.iter().any(|v| !v.is_finite()) {
            return None;
        }
        for (j, &i) in free.iter().enumerate() {
            x[i] = x_ls[j];
        }
        let (w, r, halfspaces) = match obj {
            Objective::LeastSquares => {
                return Some(FaceSolution { x, mu: 1.0, eta: Vec::new() })
            }
            Objective::Linear { w, r, halfspaces } => (w, r, halfspaces),
        };
        let res_sq = (&self.inst.y - &self.inst.a * &x).norm_squared();
        let rho_sq = r * r - res_sq;
        if !(rho_sq > 0.0) || k == 0 {
            return None;
        }
        let w_f = DVector::from_fn(k, |j, _| w[free[j]]);
        let p = solve(&w_f);
        let act: Vec<usize> = (0..halfspaces.len()).filter(|&j| set.halfspaces[j]).collect();

        // x_F = x_LS + G^{-1}(v0 + a v1) with a = 1/mu
        let (gv0, gv1, v0, v1, e0, e1) = if act.is_empty() {
            (DVector::zeros(k), p.clone(), DVector::zeros(k), w_f.clone(), Vec::new(), Vec::new())
        } else {
            let q = act.len();
            let hmat = DMatrix::from_fn(k, q, |i, j| halfspaces[act[j]].normal[free[i]]);
            let mut qmat = DMatrix::zeros(k, q);
            for j in 0..q {
                qmat.set_column(j, &solve(&hmat.column(j).into_owned()));
            }
            let m = hmat.tr_mul(&qmat);
            let beta = DVector::from_fn(q, |j, _| {
                let h = &halfspaces[act[j]];
                h.offset - h.normal.dot(&x)
            });
            let lu = m.lu();
            let e0 = lu.solve(&beta)?;
            let e1 = lu.solve(&(-hmat.tr_mul(&p)))?;
            let v0 = &hmat * &e0;
            let v1 = &w_f + &hmat * &e1;
            let gv0 = &qmat * &e0;
            let gv1 = &p + &qmat * &e1;
            (gv0, gv1, v0, v1, e0.iter().copied().collect(), e1.iter().copied().collect())
        };
        let qa = v1.dot(&gv1);
        let qb = v0.dot(&gv1);
        let qc = v0.dot(&gv0) - rho_sq;
        if !(qa > 0.0) {
            return None;
        }
        let disc = qb * qb - qa * qc;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // roots of qa a^2 + 2 qb a + qc; keep positive ones, best objective
        let objective_at = |a: f64| w_f.dot(&(&gv0 + &gv1 * a));
        let mut best: Option<(f64, f64)> = None;
        for a in [(-qb + sq) / qa, (-qb - sq) / qa] {
            if a > 0.0 && a.is_finite() {
                let v = objective_at(a);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((a, v));
                }
            }
        }
        let (a, _) = best?;
        let dx = &gv0 + &gv1 * a;
        for (j, &i) in free.iter().enumerate() {
            x[i] += dx[j];
        }
        let mut eta = vec![0.0; halfspaces.len()];
        for (j, &h) in act.iter().enumerate() {
            eta[h] = (e0[j] + a * e1[j]) / a;
        }
        Some(FaceSolution { x, mu: 1.0 / a, eta })
    }

    /// Primal-dual active-set iteration from `start`. Returns the face
    /// solution once no bound, multiplier or half-space is violated.
    fn refine(&self, start: ActiveSet, obj: Objective, max_steps: usize) -> Option<(FaceSolution, ActiveSet, usize)> {
        let s = self.bound;
        let eps_x = 1e-13 * s;
        let scale = match obj {
            Objective::Linear { w, .. } => w.amax().max(1e-300),
            Objective::LeastSquares => self.aty.amax().max(1e-300),
        };
        let eps_g = 1e-12 * scale;
        let halfspaces: &[Halfspace] = match obj {
            Objective::Linear { halfspaces, .. } => halfspaces,
            Objective::LeastSquares => &[],
        };
        let mut set = start;
        let mut seen = HashSet::new();
        let mut single = false;
        for step in 1..=max_steps {
            if !seen.insert(set.clone()) {
                if single {
                    return None;
                }
                single = true;
                seen.clear();
                seen.insert(set.clone());
            }
            let sol = self.solve_face(&set, obj)?;
            let g = self.lagrangian_grad(&sol.x, sol.mu, &sol.eta, obj);
            // (index, is_halfspace, new state, violation size)
            let mut moves: Vec<(usize, bool, Bound, f64)> = Vec::new();
            for i in 0..sol.x.len() {
                match set.coords[i] {
                    Bound::Free if sol.x[i] > s + eps_x => moves.push((i, false, Bound::Upper, (sol.x[i] - s) / s)),
                    Bound::Free if sol.x[i] < -s - eps_x => moves.push((i, false, Bound::Lower, (-s - sol.x[i]) / s)),
                    Bound::Upper if g[i] > eps_g => moves.push((i, false, Bound::Free, g[i] / scale)),
                    Bound::Lower if g[i] < -eps_g => moves.push((i, false, Bound::Free, -g[i] / scale)),
                    _ => {}
                }
            }
            for (j, h) in halfspaces.iter().enumerate() {
                if set.halfspaces[j] && sol.eta[j] < -eps_g {
                    moves.push((j, true, Bound::Free, -sol.eta[j] / scale));
                } else if !set.halfspaces[j] && h.slack(&sol.x) < -eps_x * h.normal.norm() {
                    moves.push((j, true, Bound::Upper, -h.slack(&sol.x) / (s * h.normal.norm())));
                }
            }
            if moves.is_empty() {
                return Some((sol, set, step));
            }
            if single {
                let mv = *moves.iter().max_by(|a, b| a.3.total_cmp(&b.3)).expect("non-empty");
                moves = vec![mv];
            }
            for (i, is_h, to, _) in moves {
                if is_h {
                    set.halfspaces[i] = to != Bound::Free;
                } else {
                    set.coords[i] = to;
                }
            }
        }
        None
    }

    /// `argmin |x - x0|` subject to `|y - A x| <= r`, by a secular equation
    /// for the multiplier in the singular basis of `A`.
    pub fn project_residual_ball(&self, x0: &DVector<f64>, r: f64) -> Result<DVector<f64>> {
        if x0.len() != self.inst.n {
            return Err(Error::InvalidDimension(format!("x0 has {} entries, n = {}", x0.len(), self.inst.n)));
        }
        if !(r > 0.0) {
            return Err(Error::Domain(format!("radius must be positive, got {r}")));
        }
        let svd = self.svd();
        let xi0 = svd.v.tr_mul(x0);
        let d = DVector::from_fn(xi0.len(), |i, _| svd.c[i] - svd.sv[i] * xi0[i]);
        let target = r * r - svd.perp_sq;
        if self.inst.residual_norm(x0) <= r {
            return Ok(x0.clone());
        }
        if !(target > 0.0) {
            return Err(Error::Infeasible {
                radius: r,
                min_residual: svd.perp_sq.sqrt(),
            });
        }
        let sq = |mu: f64| -> f64 {
            d.iter()
                .zip(svd.sv.iter())
                .map(|(&di, &si)| {
                    let t = di / (1.0 + mu * si * si);
                    t * t
                })
                .sum()
        };
        if sq(0.0) <= target {
            return Ok(x0.clone());
        }
        // Newton on 1/sqrt(sq(mu)) - 1/sqrt(target), which is concave and
        // increasing in mu; bisection guards the bracket.
        let goal = 1.0 / target.sqrt();
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while sq(hi) > target {
            lo = hi;
            hi *= 4.0;
            if hi > 1e300 {
                return Err(Error::NoBracket {
                    what: "residual-ball multiplier",
                    lo,
                    hi,
                });
            }
        }
        let mut mu = lo;
        for _ in 0..200 {
            let (mut f, mut df) = (0.0, 0.0);
            for (&di, &si) in d.iter().zip(svd.sv.iter()) {
                let den = 1.0 + mu * si * si;
                let t = di / den;
                f += t * t;
                df += -2.0 * t * t * si * si / den;
            }
            let phi = 1.0 / f.sqrt() - goal;
            if phi < 0.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            let dphi = -0.5 * df / (f * f.sqrt());
            let mut next = mu - phi / dphi;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - mu).abs() <= 1e-15 * next.max(1e-300) || hi - lo <= 1e-15 * hi {
                mu = next;
                break;
            }
            mu = next;
        }
        let delta = DVector::from_fn(d.len(), |i, _| {
            let si = svd.sv[i];
            mu * si * d[i] / (1.0 + mu * si * si)
        });
        Ok(x0 + &svd.v * delta)
    }

    /// `argmin |y - A x|` over the unit ball `|x| <= 1`: the minimum-norm
    /// least-squares solution if it fits, otherwise the ridge solution whose
    /// norm is exactly one (secular equation in the ridge parameter).
    pub fn min_residual_unit_ball(&self) -> Result<DVector<f64>> {
        let svd = self.svd();
        let cutoff = 1e-12 * svd.sv.amax();
        let coef = |lambda: f64| {
            DVector::from_fn(svd.sv.len(), |i, _| {
                let si = svd.sv[i];
                if si > cutoff {
                    si * svd.c[i] / (si * si + lambda)
                } else {
                    0.0
                }
            })
        };
        let norm_sq = |lambda: f64| coef(lambda).norm_squared();
        let lambda = if norm_sq(0.0) <= 1.0 {
            0.0
        } else {
            let mut hi = 1.0;
            while norm_sq(hi) > 1.0 {
                hi *= 4.0;
                if hi > 1e300 {
                    return Err(Error::NoBracket {
                        what: "unit-ball ridge parameter",
                        lo: 0.0,
                        hi,
                    });
                }
            }
            let mut lo = 0.0;
            for _ in 0..300 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if norm_sq(mid) > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };
        Ok(&svd.v * coef(lambda))
    }

    /// Minimizer of `|y - A x|` over the box, cached after the first call.
    /// Accelerated projected gradient locates the face, the active-set
    /// polish finishes it exactly.
    pub fn min_box_residual(&self) -> Result<&BoxResidual> {
        if let Some(b) = self.box_min.get() {
            return Ok(b);
        }
        let b = self.compute_box_min(&SolverSettings::default())?;
        Ok(self.box_min.get_or_init(|| b))
    }

    fn finish_box(&self, sol: FaceSolution, set: ActiveSet, iterations: usize) -> BoxResidual {
        let s = self.bound;
        let x = sol.x.map(|v| v.clamp(-s, s));
        BoxResidual {
            r_min: self.inst.residual_norm(&x),
            x_plt: x,
            iterations,
            active: set,
        }
    }

    fn compute_box_min(&self, settings: &SolverSettings) -> Result<BoxResidual> {
        let n = self.inst.n;
        let s = self.bound;
        if n <= self.inst.m {
            let all_free = ActiveSet {
                coords: vec![Bound::Free; n],
                halfspaces: Vec::new(),
            };
            if let Some((sol, set, k)) = self.refine(all_free, Objective::LeastSquares, POLISH_STEPS) {
                return Ok(self.finish_box(sol, set, k));
            }
        }
        let lip = self.gram_norm() * 1.01;
        let step = 1.0 / lip;
        let mut x = DVector::<f64>::zeros(n);
        let mut z = x.clone();
        let mut t = 1.0f64;
        let mut total = 0;
        for it in 1..=settings.max_iter {
            let grad = &self.gram * &z - &self.aty;
            let next = (&z - grad * step).map(|v| v.clamp(-s, s));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            z = &next + (&next - &x) * ((t - 1.0) / t_next);
            x = next;
            t = t_next;
            total = it;
            if it % POLISH_EVERY == 0 {
                let guess = ActiveSet::from_point(&x, s, &[], 1e-9 * s);
                if let Some((sol, set, k)) = self.refine(guess, Objective::LeastSquares, POLISH_STEPS) {
                    return Ok(self.finish_box(sol, set, it + k));
                }
            }
        }
        Err(Error::NotConverged {
            what: "min_box_residual",
            evals: total,
        })
    }

    /// Largest eigenvalue of `A'A` by power iteration.
    fn gram_norm(&self) -> f64 {
        let n = self.inst.n;
        let mut v = DVector::from_fn(n, |i, _| 1.0 + (i % 7) as f64 * 0.1);
        v /= v.norm();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let gv = &self.gram * &v;
            let next = gv.norm();
            if next == 0.0 {
                return 1.0;
            }
            v = gv / next;
            if (next - lambda).abs() <= 1e-10 * next {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda
    }

    fn kkt_residual(&self, sol: &FaceSolution, x: &DVector<f64>, set: &ActiveSet, obj: Objective) -> f64 {
        let g = self.lagrangian_grad(x, sol.mu, &sol.eta, obj);
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let v = match set.coords[i] {
                Bound::Free => g[i].abs(),
                Bound::Upper => g[i].max(0.0),
                Bound::Lower => (-g[i]).max(0.0),
            };
            worst = worst.max(v);
        }
        if let Objective::Linear { r, halfspaces, .. } = obj {
            for (h, &e) in halfspaces.iter().zip(&sol.eta) {
                worst = worst.max((-e).max(0.0)).max((e * h.slack(x)).abs());
            }
            worst = worst
                .max((-sol.mu).max(0.0))
                .max((sol.mu * (self.inst.residual_norm(x) - r)).abs());
        }
        worst
    }

    fn report_from_face(
        &self,
        sol: FaceSolution,
        set: ActiveSet,
        w: &DVector<f64>,
        r: f64,
        halfspaces: &[Halfspace],
        iterations: usize,
        merit: Vec<f64>,
        settings: &SolverSettings,
    ) -> SolverReport {
        let s = self.bound;
        let x = sol.x.map(|v| v.clamp(-s, s));
        let obj = Objective::Linear { w, r, halfspaces };
        let kkt = self.kkt_residual(&sol, &x, &set, obj);
        let residual = self.inst.residual_norm(&x);
        let feasible = residual <= r + settings.tol_feas
            && halfspaces.iter().all(|h| h.slack(&x) >= -settings.tol_feas);
        let status = if feasible && kkt <= settings.tol_kkt {
            SolverStatus::Optimal
        } else {
            SolverStatus::MaxIterations
        };
        SolverReport {
            objective: -w.dot(&x),
            residual,
            x_star: x,
            iterations,
            status,
            kkt_residual: kkt,
            multiplier: sol.mu,
            active: set,
            merit,
        }
    }

    /// Optimality check for a point where the residual ball does not bind
    /// (multiplier 0): the half-space multipliers are fitted to the free
    /// coordinates by least squares and the usual KKT test decides.
    #[allow(clippy::too_many_arguments)]
    fn certify_slack_ball(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
        r: f64,
        halfspaces: &[Halfspace],
        iterations: usize,
        merit: &[f64],
        settings: &SolverSettings,
    ) -> Option<SolverReport> {
        if halfspaces.is_empty() || self.inst.residual_norm(x) > r + settings.tol_feas {
            return None;
        }
        let s = self.bound;
        let set = ActiveSet::from_point(x, s, halfspaces, 1e-9 * s);
        let free: Vec<usize> = (0..x.len()).filter(|&i| set.coords[i] == Bound::Free).collect();
        let act: Vec<usize> = (0..halfspaces.len()).filter(|&j| set.halfspaces[j]).collect();
        let mut eta = vec![0.0; halfspaces.len()];
        if !free.is_empty() {
            if act.is_empty() {
                return None;
            }
            let hmat = DMatrix::from_fn(free.len(), act.len(), |i, j| halfspaces[act[j]].normal[free[i]]);
            let rhs = DVector::from_fn(free.len(), |i, _| -w[free[i]]);
            let e = hmat.svd(true, true).solve(&rhs, 1e-12).ok()?;
            for (j, &h) in act.iter().enumerate() {
                eta[h] = e[j];
            }
        }
        let sol = FaceSolution { x: x.clone(), mu: 0.0, eta };
        let rep = self.report_from_face(sol, set, w, r, halfspaces, iterations, merit.to_vec(), settings);
        (rep.status == SolverStatus::Optimal).then_some(rep)
    }

    /// Projection onto the box intersected with the half-spaces.
    fn project_box(&self, v: &DVector<f64>, halfspaces: &[Halfspace]) -> DVector<f64> {
        let s = self.bound;
        let clamp = |u: &DVector<f64>| u.map(|t| t.clamp(-s, s));
        match halfspaces {
            [] => clamp(v),
            [h] => {
                // x(eta) = clamp(v + eta a) with the smallest eta >= 0 making
                // a'x >= b; a'x(eta) is non-decreasing in eta.
                let at = |eta: f64| clamp(&(v + &h.normal * eta));
                let x0 = at(0.0);
                if h.slack(&x0) >= 0.0 {
                    return x0;
                }
                let (mut lo, mut hi) = (0.0, 1.0 / h.normal.norm_squared().max(1e-300));
                let mut guard = 0;
                while h.slack(&at(hi)) < 0.0 && guard < 200 {
                    lo = hi;
                    hi *= 2.0;
                    guard += 1;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if h.slack(&at(mid)) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                at(hi)
            }
            _ => {
                // Dykstra's alternating projections
                let sets = halfspaces.len() + 1;
                let mut x = v.clone();
                let mut corr = vec![DVector::<f64>::zeros(v.len()); sets];
                for _ in 0..2000 {
                    let before = x.clone();
                    for (k, c) in corr.iter_mut().enumerate() {
                        let u = &x + &*c;
                        let p = if k == 0 {
                            clamp(&u)
                        } else {
                            let h = &halfspaces[k - 1];
                            let sl = h.slack(&u);
                            if sl >= 0.0 {
                                u.clone()
                            } else {
                                &u - &h.normal * (sl / h.normal.norm_squared())
                            }
                        };
                        *c = &u - &p;
                        x = p;
                    }
                    if (&x - &before).amax() <= 1e-15 * s {
                        break;
                    }
                }
                x
            }
        }
    }

    /// Solves the inner problem. `warm` is a face guess, typically the
    /// previous solution's.
    pub fn solve(
        &self,
        w: &DVector<f64>,
        r: f64,
        halfspaces: &[Halfspace],
        warm: Option<&ActiveSet>,
        settings: &SolverSettings,
    ) -> Result<SolverReport> {
        settings.validate()?;
        let n = self.inst.n;
        if w.len() != n || halfspaces.iter().any(|h| h.normal.len() != n) {
            return Err(Error::InvalidDimension(format!("objective or half-space length differs from n = {n}")));
        }
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("radius must be positive and finite, got {r}")));
        }
        let s = self.bound;
        let nh = halfspaces.len();
        let plt = self.min_box_residual()?;
        if plt.r_min > r + settings.tol_feas {
            return Ok(SolverReport {
                x_star: plt.x_plt.clone(),
                objective: -w.dot(&plt.x_plt),
                residual: plt.r_min,
                iterations: 0,
                status: SolverStatus::Infeasible,
                kkt_residual: f64::INFINITY,
                multiplier: f64::NAN,
                active: plt.active.clone().with_halfspaces(nh),
                merit: Vec::new(),
            });
        }

        // the box vertex along w, if the residual constraint does not bind
        let vertex = w.map(|v| if v < 0.0 { -s } else { s });
        if self.inst.residual_norm(&vertex) <= r && halfspaces.iter().all(|h| h.slack(&vertex) >= 0.0) {
            let set = ActiveSet::from_point(&vertex, s, halfspaces, 0.0);
            return Ok(SolverReport {
                objective: -w.dot(&vertex),
                residual: self.inst.residual_norm(&vertex),
                kkt_residual: 0.0,
                x_star: vertex,
                iterations: 0,
                status: SolverStatus::Optimal,
                multiplier: 0.0,
                active: set,
                merit: Vec::new(),
            });
        }

        let obj = Objective::Linear { w, r, halfspaces };
        let mut steps = 0;
        let mut starts = Vec::new();
        if let Some(ws) = warm {
            if ws.coords.len() == n {
                starts.push(ws.clone().with_halfspaces(nh));
            }
        }
        starts.push(plt.active.clone().with_halfspaces(nh));
        for start in starts {
            if let Some((sol, set, k)) = self.refine(start, obj, POLISH_STEPS) {
                steps += k;
                let rep = self.report_from_face(sol, set, w, r, halfspaces, steps, Vec::new(), settings);
                if rep.status == SolverStatus::Optimal {
                    return Ok(rep);
                }
            } else {
                steps += POLISH_STEPS;
            }
        }
        self.split(w, r, halfspaces, &plt.x_plt.clone(), steps, settings)
    }

    /// Douglas-Rachford splitting between `box (+ half-spaces)` carrying the
    /// linear term and the residual ball.
    fn split(
        &self,
        w: &DVector<f64>,
        r: f64,
        halfspaces: &[Halfspace],
        start: &DVector<f64>,
        steps_so_far: usize,
        settings: &SolverSettings,
    ) -> Result<SolverReport> {
        let s = self.bound;
        let obj = Objective::Linear { w, r, halfspaces };
        let t = 0.1 * s / w.amax().max(1e-300);
        let mut v = start.clone();
        let mut merit = Vec::new();
        let mut x = start.clone();
        let mut steps = steps_so_far;
        for it in 1..=settings.max_iter {
            x = self.project_box(&(&v + w * t), halfspaces);
            let z = self.project_residual_ball(&(&x * 2.0 - &v), r)?;
            let diff = &z - &x;
            merit.push(diff.norm());
            v += diff;
            if it % POLISH_EVERY == 0 {
                let guess = ActiveSet::from_point(&x, s, halfspaces, 1e-9 * s);
                if let Some((sol, set, k)) = self.refine(guess, obj, POLISH_STEPS) {
                    steps += k;
                    let rep = self.report_from_face(sol, set, w, r, halfspaces, steps + it, merit.clone(), settings);
                    if rep.status == SolverStatus::Optimal {
                        return Ok(rep);
                    }
                }
                if let Some(rep) = self.certify_slack_ball(&x, w, r, halfspaces, steps + it, &merit, settings) {
                    return Ok(rep);
                }
            }
        }
        // best effort: the box-feasible iterate, reported as unfinished
        let set = ActiveSet::from_point(&x, s, halfspaces, 1e-9 * s);
        Ok(SolverReport {
            objective: -w.dot(&x),
            residual: self.inst.residual_norm(&x),
            x_star: x,
            iterations: steps + settings.max_iter,
            status: SolverStatus::MaxIterations,
            kkt_residual: f64::INFINITY,
            multiplier: f64::NAN,
            active: set,
            merit,
        })
    }

    /// Runs only the splitting scheme (no active-set shortcut before it).
    /// Exposed so its merit sequence can be inspected.
    pub fn solve_by_splitting(
        &self,
        w: &DVector<f64>,
        r: f64,
        halfspaces: &[Halfspace],
        settings: &SolverSettings,
    ) -> Result<SolverReport> {
        settings.validate()?;
        let plt = self.min_box_residual()?.x_plt.clone();
        self.split(w, r, halfspaces, &plt, 0, settings)
    }
}

/// One-shot solve of an [`InnerProblem`].
pub fn solve_inner(problem: &InnerProblem, tol_feas: f64, tol_kkt: f64, max_iter: usize) -> Result<SolverReport> {
    let ctx = SolverContext::new(problem.instance);
    let settings = SolverSettings {
        tol_feas,
        tol_kkt,
        max_iter,
    };
    ctx.solve(&problem.w, problem.r, &problem.extra_halfspaces, None, &settings)
}

pub fn project_residual_ball(x0: &DVector<f64>, instance: &ProblemInstance, r: f64) -> Result<DVector<f64>> {
    SolverContext::new(instance).project_residual_ball(x0, r)
}

pub fn min_box_residual(instance: &ProblemInstance) -> Result<BoxResidual> {
    SolverContext::new(instance).min_box_residual().cloned()
}
