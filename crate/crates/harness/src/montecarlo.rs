//! Seeded Monte Carlo trials and their aggregation.
//!
//! Trial `t` of a campaign with seed `s` draws its instance from
//! `derive_seed(s, t)` and its starting point from a seed derived from that,
//! so results do not depend on how trials are spread over threads. The same
//! instance seeds are reused across SNRs and radii (common random numbers).

use clup_core::baselines::{bit_flip_ml, polytope_detect_with};
use clup_core::clup::{
    base_radius, multistart_with_context, run_with_context, warmstart_with_context, ClupConfig, ClupResult,
    WarmStart,
};
use clup_core::inner_solver::{SolverContext, SolverStatus};
use clup_core::model::{derive_seed, generate_instance, overlap_stats, random_sign_vector, rng_from_seed, sign_round,
    snr_db_to_sigma, ProblemInstance,
};
use clup_core::rdt::clup::r_plt_theory;
use clup_core::rdt::RdtParams;
use clup_core::{Error, Result};
use nalgebra::DVector;
use rayon::prelude::*;

/// Instance seed of trial `trial`.
pub fn instance_seed(seed: u64, trial: u64) -> u64 {
    derive_seed(seed, trial)
}

/// Seed of the random start used on an instance.
pub fn start_seed(instance_seed: u64) -> u64 {
    derive_seed(instance_seed, 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: u64,
    pub instance_seed: u64,
    pub c2: f64,
    pub c1: f64,
    pub bit_errors: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Every step of the `sqrt(c2)` trace is non-decreasing within 1e-9.
    pub monotone: bool,
    pub polytope_errors: Option<usize>,
    pub ml_errors: Option<usize>,
}

/// Baseline detectors to run next to CLuP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baselines {
    pub ml_restarts: usize,
}

fn errors(inst: &ProblemInstance, est: &DVector<f64>) -> Result<usize> {
    Ok((overlap_stats(est, inst)?.ber * inst.n as f64).round() as usize)
}

/// Runs CLuP per `config` (random start, polytope start, the two-stage
/// overlap-constrained start, or the best of `config.restarts` random starts).
pub fn run_clup(ctx: &SolverContext, config: &ClupConfig, seed: u64) -> Result<ClupResult> {
    let inst = ctx.instance();
    let r_plt = base_radius(ctx, config)?;
    match config.warm_start {
        WarmStart::PolytopeWithOverlapConstraint => {
            let params = RdtParams::new(inst.m as f64 / inst.n as f64, inst.sigma)?;
            let c1_plt = r_plt_theory(&params)?.point.c1;
            warmstart_with_context(ctx, config, c1_plt, r_plt)
        }
        WarmStart::RandomSign if config.restarts > 1 => multistart_with_context(ctx, config, config.restarts, seed, r_plt),
        WarmStart::RandomSign => {
            let x0 = random_sign_vector(inst.n, &mut rng_from_seed(seed));
            run_with_context(ctx, config, &x0, seed, r_plt, &[])
        }
        WarmStart::PolytopeRound => {
            let x0 = sign_round(&ctx.min_box_residual()?.x_plt);
            run_with_context(ctx, config, &x0, seed, r_plt, &[])
        }
    }
}

pub fn run_trial(
    n: usize,
    alpha: f64,
    snr_db: f64,
    config: &ClupConfig,
    seed: u64,
    trial: u64,
    baselines: Option<Baselines>,
) -> Result<TrialOutcome> {
    let iseed = instance_seed(seed, trial);
    let inst = generate_instance(n, alpha, snr_db_to_sigma(snr_db), iseed)?;
    let ctx = SolverContext::new(&inst);
    let res = run_clup(&ctx, config, start_seed(iseed))?;
    let monotone = res.trace.windows(2).all(|w| w[1].c2.sqrt() >= w[0].c2.sqrt() - 1e-9);
    let (polytope_errors, ml_errors) = match baselines {
        Some(b) => {
            let p = polytope_detect_with(&ctx)?;
            let ml = bit_flip_ml(&inst, &res.x_clup, b.ml_restarts, derive_seed(iseed, 2))?;
            (Some(errors(&inst, &p.x_hat)?), Some(errors(&inst, &ml.x_hat)?))
        }
        None => (None, None),
    };
    Ok(TrialOutcome {
        trial,
        instance_seed: iseed,
        c2: res.stats.c2,
        c1: res.stats.c1,
        bit_errors: errors(&inst, &res.x_clup)?,
        iterations: res.iterations(),
        converged: res.converged,
        monotone,
        polytope_errors,
        ml_errors,
    })
}

/// `trials` independent trials in a pool of `workers` threads, returned in
/// trial order.
pub fn run_trials<T, F>(trials: usize, workers: usize, f: F) -> Vec<(u64, Result<T>)>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let work = || (0..trials as u64).into_par_iter().map(|t| (t, f(t))).collect();
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

/// Sample mean and its standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Error rate over `bits` bits with its binomial standard error.
pub fn ber_se(errors: usize, bits: usize) -> (f64, f64) {
    if bits == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = errors as f64 / bits as f64;
    (p, (p * (1.0 - p) / bits as f64).sqrt())
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub mean_c2: f64,
    pub se_c2: f64,
    pub mean_c1: f64,
    pub se_c1: f64,
    pub ber: f64,
    pub ber_se: f64,
    pub mean_iterations: f64,
    pub median_iterations: f64,
    pub converged_fraction: f64,
    pub monotone_fraction: f64,
    pub polytope_ber: Option<(f64, f64)>,
    pub ml_ber: Option<(f64, f64)>,
}

pub fn aggregate(outcomes: &[TrialOutcome], failed: usize, n: usize) -> Aggregate {
    let k = outcomes.len();
    let col = |f: fn(&TrialOutcome) -> f64| outcomes.iter().map(f).collect::<Vec<_>>();
    let (mean_c2, se_c2) = mean_se(&col(|o| o.c2));
    let (mean_c1, se_c1) = mean_se(&col(|o| o.c1));
    let (ber, ber_err) = ber_se(outcomes.iter().map(|o| o.bit_errors).sum(), k * n);
    let mut iters = col(|o| o.iterations as f64);
    let (mean_iterations, _) = mean_se(&iters);
    let frac = |f: fn(&TrialOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / k.max(1) as f64;
    let baseline = |f: fn(&TrialOutcome) -> Option<usize>| -> Option<(f64, f64)> {
        let errs: Option<Vec<usize>> = outcomes.iter().map(f).collect();
        errs.filter(|e| !e.is_empty()).map(|e| ber_se(e.iter().sum(), k * n))
    };
    Aggregate {
        trials_ok: k,
        trials_failed: failed,
        mean_c2,
        se_c2,
        mean_c1,
        se_c1,
        ber,
        ber_se: ber_err,
        mean_iterations,
        median_iterations: median(&mut iters),
        converged_fraction: frac(|o| o.converged),
        monotone_fraction: frac(|o| o.monotone),
        polytope_ber: baseline(|o| o.polytope_errors),
        ml_ber: baseline(|o| o.ml_errors),
    }
}

/// One CLuP step from a random start, in the coordinates of the
/// first-iteration theory: `s1 = x0'(x_sol - x)`, `xi` the residual over
/// `sqrt(n)`, and the sign error rate, squared norm and overlap of the
/// unnormalized inner solution `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstStep {
    pub s1: f64,
    pub xi: f64,
    pub ber: f64,
    pub norm_sq: f64,
    pub overlap: f64,
}

pub fn first_step_trial(n: usize, alpha: f64, snr_db: f64, config: &ClupConfig, radius: Option<f64>, seed: u64, trial: u64) -> Result<FirstStep> {
    let iseed = instance_seed(seed, trial);
    let inst = generate_instance(n, alpha, snr_db_to_sigma(snr_db), iseed)?;
    let ctx = SolverContext::new(&inst);
    let x0 = random_sign_vector(n, &mut rng_from_seed(start_seed(iseed)));
    let r = match radius {
        Some(r) => r * (n as f64).sqrt(),
        None => config.r_sc * base_radius(&ctx, config)?,
    };
    let rep = ctx.solve(&x0, r, &[], None, &config.solver)?;
    if rep.status != SolverStatus::Optimal {
        return Err(Error::NotConverged {
            what: "first CLuP step",
            evals: rep.iterations,
        });
    }
    let x = &rep.x_star;
    let stats = overlap_stats(x, &inst)?;
    Ok(FirstStep {
        s1: x0.dot(&(&inst.x_sol - x)),
        xi: rep.residual / (n as f64).sqrt(),
        ber: stats.ber,
        norm_sq: stats.c2,
        overlap: stats.c1,
    })
}

/// Means and standard errors of the first-step quantities, in the order
/// `s1, xi, ber, norm_sq, overlap`.
pub fn first_step_summary(samples: &[FirstStep]) -> [(f64, f64); 5] {
    let col = |f: fn(&FirstStep) -> f64| mean_se(&samples.iter().map(f).collect::<Vec<_>>());
    [col(|s| s.s1), col(|s| s.xi), col(|s| s.ber), col(|s| s.norm_sq), col(|s| s.overlap)]
}
