//! Derivative-free scalar and multivariate optimizers.
//!
//! Everything here is deterministic: no global RNG, so identical inputs give
//! bit-identical outputs.

use crate::error::{Error, Result};

/// Stopping rule shared by all optimizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    /// Absolute tolerance on the argument.
    pub x_tol: f64,
    /// Absolute tolerance on the objective value.
    pub f_tol: f64,
    pub max_evals: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            x_tol: 1e-10,
            f_tol: 1e-12,
            max_evals: 2000,
        }
    }
}

impl OptimizerSettings {
    pub fn with_x_tol(mut self, x_tol: f64) -> Self {
        self.x_tol = x_tol;
        self
    }

    pub fn with_max_evals(mut self, max_evals: usize) -> Self {
        self.max_evals = max_evals;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_tol > 0.0) || !(self.f_tol > 0.0) {
            return Err(Error::InvalidConfig("optimizer tolerances must be > 0".into()));
        }
        if self.max_evals == 0 {
            return Err(Error::InvalidConfig("max_evals must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarOptimum {
    pub x: f64,
    pub value: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdOptimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Brent's bounded minimization on `[lo, hi]`.
pub fn minimize_scalar<F>(mut f: F, lo: f64, hi: f64, settings: &OptimizerSettings) -> Result<ScalarOptimum>
where
    F: FnMut(f64) -> f64,
{
    settings.validate()?;
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut evals = 1;

    loop {
        let m = 0.5 * (a + b);
        let tol1 = settings.x_tol + f64::EPSILON * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Ok(ScalarOptimum { x, value: fx, evals });
        }
        if evals >= settings.max_evals {
            return Err(Error::NotConverged { what: "minimize_scalar", evals });
        }

        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }

        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        evals += 1;

        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
}

/// Golden-section search for a minimum inside `[lo, hi]`.
pub fn golden_section<F>(mut f: F, lo: f64, hi: f64, settings: &OptimizerSettings) -> Result<ScalarOptimum>
where
    F: FnMut(f64) -> f64,
{
    settings.validate()?;
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut c = b - (1.0 - GOLDEN) * (b - a);
    let mut d = a + (1.0 - GOLDEN) * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evals = 2;
    while b - a > settings.x_tol {
        if evals >= settings.max_evals {
            return Err(Error::NotConverged { what: "golden_section", evals });
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (1.0 - GOLDEN) * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (1.0 - GOLDEN) * (b - a);
            fd = f(d);
        }
        evals += 1;
    }
    let (x, value) = if fc <= fd { (c, fc) } else { (d, fd) };
    Ok(ScalarOptimum { x, value, evals })
}

/// Brent–Dekker root finding. Requires a sign change over `[lo, hi]`.
pub fn find_root<F>(mut f: F, lo: f64, hi: f64, settings: &OptimizerSettings) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    settings.validate()?;
    let mut a = lo;
    let mut b = hi;
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::NoBracket { what: "find_root", lo, hi });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    let mut evals = 2;

    loop {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * settings.x_tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if evals >= settings.max_evals {
            return Err(Error::NotConverged { what: "find_root", evals });
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        evals += 1;
    }
}

/// Nelder–Mead maximization with deterministic restarts.
///
/// `scales` gives the initial simplex edge per coordinate. After the first
/// run the search restarts `restarts` times from the incumbent with a
/// shrinking, sign-alternating perturbation; the best point wins.
pub fn maximize_nd<F>(
    mut f: F,
    start: &[f64],
    scales: &[f64],
    restarts: usize,
    settings: &OptimizerSettings,
) -> Result<NdOptimum>
where
    F: FnMut(&[f64]) -> f64,
{
    settings.validate()?;
    if start.len() != scales.len() || start.is_empty() {
        return Err(Error::InvalidDimension("start and scales must be non-empty and equal length".into()));
    }
    let mut neg = |x: &[f64]| -f(x);
    let mut best = nelder_mead(&mut neg, start, scales, settings)?;
    for k in 0..restarts {
        let shrink = 0.5f64.powi(k as i32 + 1);
        let perturbed: Vec<f64> = best
            .x
            .iter()
            .zip(scales)
            .enumerate()
            .map(|(i, (x, s))| if (i + k) % 2 == 0 { x + s * shrink } else { x - s * shrink })
            .collect();
        let sc: Vec<f64> = scales.iter().map(|s| s * shrink).collect();
        let run = nelder_mead(&mut neg, &perturbed, &sc, settings)?;
        let evals = best.evals + run.evals;
        if run.value < best.value {
            best = run;
        }
        best.evals = evals;
    }
    best.value = -best.value;
    Ok(best)
}

fn nelder_mead<F>(f: &mut F, start: &[f64], scales: &[f64], settings: &OptimizerSettings) -> Result<NdOptimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(start.to_vec());
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += scales[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| sanitize(f(p))).collect();
    let mut evals = n + 1;

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[n] - vals[0];
        let diam = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= settings.f_tol && diam <= settings.x_tol {
            return Ok(NdOptimum { x: pts[0].clone(), value: vals[0], evals });
        }
        if evals >= settings.max_evals {
            return Err(Error::NotConverged { what: "maximize_nd", evals });
        }

        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };

        let xr = along(-1.0);
        let fr = sanitize(f(&xr));
        evals += 1;
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = sanitize(f(&xe));
            evals += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(-0.5);
            let fc = sanitize(f(&xc));
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = sanitize(f(&xc));
            (xc, fc)
        };
        evals += 1;
        if fc < fr.min(vals[n]) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            for j in 0..n {
                pts[i][j] = pts[0][j] + 0.5 * (pts[i][j] - pts[0][j]);
            }
            vals[i] = sanitize(f(&pts[i]));
        }
        evals += n;
    }
}

#[inline]
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_quadratic() {
        let s = OptimizerSettings::default();
        let r = minimize_scalar(|x| x * x, -1.0, 2.0, &s).unwrap();
        assert!(r.x.abs() < 1e-9);
        assert!(r.value.abs() < 1e-18);
    }

    #[test]
    fn brent_respects_bounds() {
        let s = OptimizerSettings::default();
        let r = minimize_scalar(|x| x, 1.0, 3.0, &s).unwrap();
        assert!((r.x - 1.0).abs() < 1e-8);
    }

    #[test]
    fn golden_matches_brent() {
        let s = OptimizerSettings::default();
        let f = |x: f64| (x - 0.7).powi(2) + 0.1 * (3.0 * x).cos();
        let a = minimize_scalar(f, 0.0, 1.5, &s).unwrap();
        let b = golden_section(f, 0.0, 1.5, &s).unwrap();
        assert!((a.x - b.x).abs() < 1e-8);
    }

    #[test]
    fn root_linear() {
        let s = OptimizerSettings::default();
        let r = find_root(|x| x - 0.3, 0.0, 1.0, &s).unwrap();
        assert!((r - 0.3).abs() < 1e-12);
    }

    #[test]
    fn root_requires_bracket() {
        let s = OptimizerSettings::default();
        assert!(matches!(find_root(|x| x * x + 1.0, -1.0, 1.0, &s), Err(Error::NoBracket { .. })));
    }

    #[test]
    fn non_convergence_is_reported() {
        let s = OptimizerSettings::default().with_max_evals(3);
        assert!(matches!(
            minimize_scalar(|x| (x - 0.123).powi(2), -10.0, 10.0, &s),
            Err(Error::NotConverged { .. })
        ));
        assert!(matches!(
            find_root(|x| x.powi(3) - 0.123, -10.0, 10.0, &s),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let s = OptimizerSettings::default().with_max_evals(20_000);
        let f = |p: &[f64]| -((1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2));
        let r = maximize_nd(f, &[-1.2, 1.0], &[0.5, 0.5], 3, &s).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6, "{:?}", r);
        assert!((r.x[1] - 1.0).abs() < 1e-6, "{:?}", r);
    }

    #[test]
    fn deterministic_reruns() {
        let s = OptimizerSettings::default();
        let f = |p: &[f64]| -(p[0] - 0.3).powi(2) - (p[1] + 0.2).powi(4) + 0.01 * p[0] * p[1];
        let a = maximize_nd(f, &[0.0, 0.0], &[0.3, 0.3], 3, &s).unwrap();
        let b = maximize_nd(f, &[0.0, 0.0], &[0.3, 0.3], 3, &s).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }
}
