//! Random MIMO instances `y = A x_sol + sigma v` and overlap statistics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise scale for an SNR given as `1/sigma^2` in dB.
pub fn snr_db_to_sigma(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

pub fn sigma_to_snr_db(sigma: f64) -> f64 {
    -20.0 * sigma.log10()
}

/// Receive dimension for a given transmit dimension: `round(alpha n)`, ties up.
pub fn receive_dim(n: usize, alpha: f64) -> usize {
    (alpha * n as f64 + 0.5).floor() as usize
}

/// SplitMix64 finalizer used to derive per-trial seeds from a campaign seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The generator used everywhere randomness is needed (ChaCha20, counter based).
pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// A uniformly random point of `{-1/sqrt(n), +1/sqrt(n)}^n`.
pub fn random_sign_vector<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    let s = 1.0 / (n as f64).sqrt();
    DVector::from_fn(n, |_, _| if rng.random::<bool>() { s } else { -s })
}

/// Componentwise `sign(x)/sqrt(n)` with `sign(0) = +1`.
pub fn sign_round(x: &DVector<f64>) -> DVector<f64> {
    let s = 1.0 / (x.len() as f64).sqrt();
    x.map(|v| if v < 0.0 { -s } else { s })
}

/// One realized MIMO system.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub seed: u64,
    pub a: DMatrix<f64>,
    pub x_sol: DVector<f64>,
    pub noise: DVector<f64>,
    pub y: DVector<f64>,
}

/// Compact description from which an instance is regenerated bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl InstanceRecord {
    pub fn regenerate(&self) -> Result<ProblemInstance> {
        let inst = generate_instance(self.n, self.alpha, self.sigma, self.seed)?;
        if inst.m != self.m {
            return Err(Error::InvalidDimension(format!(
                "record says m = {} but round(alpha n) = {}",
                self.m, inst.m
            )));
        }
        Ok(inst)
    }
}

/// Draws `A` (column major), then the signs of `x_sol`, then `v`, all from one
/// ChaCha20 stream seeded with `seed`.
pub fn generate_instance(n: usize, alpha: f64, sigma: f64, seed: u64) -> Result<ProblemInstance> {
    if n == 0 {
        return Err(Error::InvalidDimension("n must be >= 1".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidDimension(format!("alpha must be positive, got {alpha}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidDimension(format!("sigma must be >= 0, got {sigma}")));
    }
    let m = receive_dim(n, alpha);
    if m < 1 {
        return Err(Error::InvalidDimension(format!("round(alpha n) = {m} < 1")));
    }
    let mut rng = rng_from_seed(seed);
    let a = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x_sol = random_sign_vector(n, &mut rng);
    let noise = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &a * &x_sol + &noise * sigma;
    Ok(ProblemInstance {
        n,
        m,
        alpha,
        sigma,
        seed,
        a,
        x_sol,
        noise,
        y,
    })
}

impl ProblemInstance {
    /// Builds an instance from explicit data (used for hand-made examples).
    pub fn from_parts(a: DMatrix<f64>, x_sol: DVector<f64>, y: DVector<f64>, sigma: f64) -> Result<Self> {
        let (m, n) = a.shape();
        if x_sol.len() != n || y.len() != m || n == 0 || m == 0 {
            return Err(Error::InvalidDimension(format!(
                "A is {m}x{n}, x_sol has {}, y has {}",
                x_sol.len(),
                y.len()
            )));
        }
        let noise = if sigma > 0.0 {
            (&y - &a * &x_sol) / sigma
        } else {
            DVector::zeros(m)
        };
        Ok(ProblemInstance {
            n,
            m,
            alpha: m as f64 / n as f64,
            sigma,
            seed: 0,
            a,
            x_sol,
            noise,
            y,
        })
    }

    pub fn record(&self) -> InstanceRecord {
        InstanceRecord {
            n: self.n,
            m: self.m,
            alpha: self.alpha,
            sigma: self.sigma,
            seed: self.seed,
        }
    }

    /// Half-width of the box, `1/sqrt(n)`.
    pub fn bound(&self) -> f64 {
        1.0 / (self.n as f64).sqrt()
    }

    pub fn residual_norm(&self, x: &DVector<f64>) -> f64 {
        (&self.y - &self.a * x).norm()
    }
}

/// Squared norm, overlap with the transmitted vector, and sign error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub c2: f64,
    pub c1: f64,
    pub ber: f64,
}

/// `sign(0)` counts as a mismatch.
pub fn overlap_stats(x: &DVector<f64>, instance: &ProblemInstance) -> Result<OverlapStats> {
    if x.len() != instance.n {
        return Err(Error::InvalidDimension(format!("x has {} entries, n = {}", x.len(), instance.n)));
    }
    let errors = x
        .iter()
        .zip(instance.x_sol.iter())
        .filter(|(xi, si)| !(xi.signum() == si.signum() && **xi != 0.0))
        .count();
    Ok(OverlapStats {
        c2: x.norm_squared(),
        c1: instance.x_sol.dot(x),
        ber: errors as f64 / instance.n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_db_to_sigma(0.0), 1.0);
        assert!((snr_db_to_sigma(10.0) - 0.316_227_766).abs() < 1e-9);
        assert!((snr_db_to_sigma(13.0) - 0.223_872_114).abs() < 1e-9);
        assert!((sigma_to_snr_db(snr_db_to_sigma(11.3)) - 11.3).abs() < 1e-12);
    }

    #[test]
    fn dimensions() {
        let inst = generate_instance(4, 0.8, 0.0, 7).unwrap();
        assert_eq!(inst.m, 3);
        assert_eq!(inst.residual_norm(&inst.x_sol), 0.0);
        assert_eq!(generate_instance(400, 0.8, 0.1, 1).unwrap().m, 320);
        // ties go up
        assert_eq!(receive_dim(5, 0.5), 3);
    }

    #[test]
    fn invalid_dimensions() {
        assert!(generate_instance(0, 0.8, 0.1, 1).is_err());
        assert!(generate_instance(10, 0.01, 0.1, 1).is_err());
        assert!(generate_instance(10, -1.0, 0.1, 1).is_err());
    }

    #[test]
    fn x_sol_is_unit_norm_binary() {
        let inst = generate_instance(37, 1.2, 0.3, 99).unwrap();
        let s = inst.bound();
        assert!(inst.x_sol.iter().all(|&v| v == s || v == -s));
        assert!((inst.x_sol.norm_squared() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn determinism_and_replay() {
        let a = generate_instance(20, 0.8, 0.2, 5).unwrap();
        let b = a.record().regenerate().unwrap();
        assert_eq!(a.a, b.a);
        assert_eq!(a.x_sol, b.x_sol);
        assert_eq!(a.noise, b.noise);
        let c = generate_instance(20, 0.8, 0.2, 6).unwrap();
        assert_ne!(a.a, c.a);
    }

    #[test]
    fn overlap_examples() {
        let inst = generate_instance(8, 1.0, 0.1, 3).unwrap();
        let s = overlap_stats(&inst.x_sol, &inst).unwrap();
        assert!((s.c2 - 1.0).abs() < 1e-14 && (s.c1 - 1.0).abs() < 1e-14 && s.ber == 0.0);
        let s = overlap_stats(&(-&inst.x_sol), &inst).unwrap();
        assert!((s.c1 + 1.0).abs() < 1e-14 && s.ber == 1.0);
        let s = overlap_stats(&(&inst.x_sol * 0.5), &inst).unwrap();
        assert!((s.c2 - 0.25).abs() < 1e-14 && (s.c1 - 0.5).abs() < 1e-14 && s.ber == 0.0);
        let mut z = inst.x_sol.clone();
        z[0] = 0.0;
        assert_eq!(overlap_stats(&z, &inst).unwrap().ber, 1.0 / 8.0);
    }

    #[test]
    fn gaussian_entries_have_unit_moments() {
        // 10^6 draws through the same path as instance generation
        let inst = generate_instance(1000, 1.0, 0.0, 2024).unwrap();
        let n = inst.a.len() as f64;
        let mean = inst.a.iter().sum::<f64>() / n;
        let var = inst.a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
