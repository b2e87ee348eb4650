//! Error-function family and standard normal helpers.

use crate::error::{Error, Result};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// sqrt(2 pi)
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
/// sqrt(pi / 2)
pub const SQRT_PI_2: f64 = 1.253_314_137_315_500_3;
/// sqrt(2 / pi)
pub const SQRT_2_PI: f64 = 0.797_884_560_802_865_4;
const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal distribution function, accurate in both tails.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Inverse error function on the open interval (-1, 1).
///
/// A single-precision rational seed (Giles' polynomial pair) refined by
/// Halley steps on `erf` until the correction is at rounding level. In the
/// tails the residual is formed through `erfc` so that `1 - |p|` is never
/// cancelled away.
pub fn erfinv(p: f64) -> Result<f64> {
    if !p.is_finite() || p.abs() >= 1.0 {
        return Err(Error::Domain(format!("erfinv argument {p} outside (-1, 1)")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    // 1 - |p| is exact for |p| >= 0.5, which is where it matters.
    Ok(p.signum() * inverse_core(p.abs(), 1.0 - p.abs()))
}

/// Inverse complementary error function on (0, 2). Takes the tail mass
/// directly, so `erfcinv(1e-300)` is as accurate as `erfinv(0.5)`.
pub fn erfcinv(q: f64) -> Result<f64> {
    if !q.is_finite() || q <= 0.0 || q >= 2.0 {
        return Err(Error::Domain(format!("erfcinv argument {q} outside (0, 2)")));
    }
    if q == 1.0 {
        return Ok(0.0);
    }
    if q < 1.0 {
        Ok(inverse_core(1.0 - q, q))
    } else {
        Ok(-inverse_core(q - 1.0, 2.0 - q))
    }
}

/// Positive root of `erf(x) = a`, where `one_minus = 1 - a` is supplied exactly.
fn inverse_core(a: f64, one_minus: f64) -> f64 {
    if one_minus < 0.1 {
        return tail_inverse(one_minus);
    }
    let mut x = giles_seed(a, one_minus).abs();
    for _ in 0..8 {
        let resid = if x > 0.5 {
            one_minus - erfc(x)
        } else {
            erf(x) - a
        };
        let slope = TWO_OVER_SQRT_PI * (-x * x).exp();
        let newton = resid / slope;
        let dx = newton / (1.0 + x * newton);
        x -= dx;
        if dx.abs() <= 1e-16 * x.abs() {
            break;
        }
    }
    x
}

/// Root of `ln erfc(x) = ln q` for small `q`. On the log scale the function
/// is close to `-x^2`, so Newton converges from the asymptotic seed
/// `x^2 = L - ln(sqrt(pi L))`, `L = -ln q`, at any depth.
fn tail_inverse(q: f64) -> f64 {
    let target = q.ln();
    let l = -target;
    let mut x = (l - (std::f64::consts::PI * l).sqrt().ln()).max(1.0).sqrt();
    for _ in 0..50 {
        let e = erfc(x);
        let dx = (e.ln() - target) / (-TWO_OVER_SQRT_PI * (-x * x).exp() / e);
        x -= dx;
        if dx.abs() <= 4.0 * f64::EPSILON * x {
            break;
        }
    }
    x
}

fn giles_seed(a: f64, one_minus: f64) -> f64 {
    let mut w = -(one_minus * (1.0 + a)).ln();
    let p = if w < 5.0 {
        w -= 2.5;
        let mut p = 2.810_226_36e-08;
        p = 3.432_739_39e-07 + p * w;
        p = -3.523_387_7e-06 + p * w;
        p = -4.391_506_54e-06 + p * w;
        p = 0.000_218_580_87 + p * w;
        p = -0.001_253_725_03 + p * w;
        p = -0.004_177_681_64 + p * w;
        p = 0.246_640_727 + p * w;
        1.501_409_41 + p * w
    } else {
        w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        p = 0.000_100_950_558 + p * w;
        p = 0.001_349_343_22 + p * w;
        p = -0.003_673_428_44 + p * w;
        p = 0.005_739_507_73 + p * w;
        p = -0.007_622_461_3 + p * w;
        p = 0.009_438_870_47 + p * w;
        p = 1.001_674_06 + p * w;
        2.832_976_82 + p * w
    };
    p * a
}
