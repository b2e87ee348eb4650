//! The CLuP outer iteration and its restart, warm-start and radius-schedule
//! variants.
//!
//! Each iteration maximizes `x_prev' x` over the residual ball intersected
//! with the box and renormalizes the maximizer. The squared objective is
//! the `c2` tracked in the trace.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner_solver::{ActiveSet, Halfspace, SolverContext, SolverSettings, SolverStatus};
use crate::model::{derive_seed, overlap_stats, random_sign_vector, rng_from_seed, sign_round, OverlapStats, ProblemInstance};
use crate::rdt::clup::r_plt_theory;
use crate::rdt::RdtParams;

/// What the polytope residual `r_plt` in `r = r_sc r_plt` refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadiusMode {
    /// The box-constrained minimum residual of the instance at hand.
    PerInstance,
    /// `sqrt(n)` times the asymptotic prediction for `(alpha, sigma)`.
    Theoretical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WarmStart {
    RandomSign,
    /// Start from the sign-rounded polytope solution.
    PolytopeRound,
    /// Two stages: CLuP from the polytope solution with the extra constraint
    /// `x_plt' x >= c1_plt`, then plain CLuP from where it stopped.
    PolytopeWithOverlapConstraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClupConfig {
    pub r_sc: f64,
    pub radius_mode: RadiusMode,
    pub i_max: usize,
    pub delta_min: f64,
    pub restarts: usize,
    /// Per-iteration multipliers replacing `r_sc`; the last one is reused
    /// once the list runs out.
    pub radius_schedule: Option<Vec<f64>>,
    pub warm_start: WarmStart,
    #[serde(skip)]
    pub solver: SolverSettings,
    /// Keep every inner solution in [`ClupResult::iterates`].
    #[serde(skip)]
    pub record_iterates: bool,
}

impl Default for ClupConfig {
    fn default() -> Self {
        ClupConfig {
            r_sc: 1.1,
            radius_mode: RadiusMode::PerInstance,
            i_max: 50,
            delta_min: 1e-8,
            restarts: 1,
            radius_schedule: None,
            warm_start: WarmStart::RandomSign,
            solver: SolverSettings::default(),
            record_iterates: false,
        }
    }
}

impl ClupConfig {
    pub fn with_r_sc(mut self, r_sc: f64) -> Self {
        self.r_sc = r_sc;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.r_sc > 0.0) || !self.r_sc.is_finite() {
            return bad(format!("r_sc must be positive, got {}", self.r_sc));
        }
        if self.radius_mode == RadiusMode::PerInstance && self.r_sc < 1.0 && self.radius_schedule.is_none() {
            return bad(format!("r_sc = {} < 1 makes per-instance radii infeasible", self.r_sc));
        }
        if self.i_max == 0 {
            return bad("i_max must be >= 1".into());
        }
        if !(self.delta_min > 0.0) {
            return bad(format!("delta_min must be positive, got {}", self.delta_min));
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1".into());
        }
        if let Some(s) = &self.radius_schedule {
            if s.is_empty() {
                return bad("radius schedule is empty".into());
            }
            if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return bad(format!("radius schedule entries must be positive: {s:?}"));
            }
            if s.windows(2).any(|p| p[1] < p[0]) {
                return bad(format!("radius schedule must be non-decreasing: {s:?}"));
            }
        }
        self.solver.validate()
    }

    /// Multiplier of `r_plt` used at iteration `i` (0-based).
    pub fn multiplier(&self, i: usize) -> f64 {
        match &self.radius_schedule {
            Some(s) => s[i.min(s.len() - 1)],
            None => self.r_sc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub c2: f64,
    pub c1: f64,
    pub delta: f64,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ClupResult {
    pub seed: u64,
    pub config: ClupConfig,
    /// `r_plt` the radii were scaled from.
    pub r_plt: f64,
    /// Last normalized iterate.
    pub x_final: DVector<f64>,
    /// Sign-rounded estimate.
    pub x_clup: DVector<f64>,
    /// Last inner solution before normalization.
    pub x_inner: DVector<f64>,
    pub trace: Vec<IterationRecord>,
    /// Unnormalized inner solutions, when `record_iterates` is set.
    pub iterates: Vec<DVector<f64>>,
    pub converged: bool,
    pub stats: OverlapStats,
}

#[derive(Serialize)]
struct ResultJson<'a> {
    seed: u64,
    config: &'a ClupConfig,
    converged: bool,
    iterations: usize,
    r_plt: f64,
    #[serde(rename = "final")]
    fin: OverlapStats,
    trace: &'a [IterationRecord],
}

impl ClupResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ResultJson {
            seed: self.seed,
            config: &self.config,
            converged: self.converged,
            iterations: self.iterations(),
            r_plt: self.r_plt,
            fin: self.stats,
            trace: &self.trace,
        })
        .expect("plain data serializes")
    }
}

/// `r_plt` for the configured radius mode.
pub fn base_radius(ctx: &SolverContext, config: &ClupConfig) -> Result<f64> {
    match config.radius_mode {
        RadiusMode::PerInstance => Ok(ctx.min_box_residual()?.r_min),
        RadiusMode::Theoretical => {
            let inst = ctx.instance();
            let params = RdtParams::new(inst.m as f64 / inst.n as f64, inst.sigma)?;
            Ok((inst.n as f64).sqrt() * r_plt_theory(&params)?.r_plt)
        }
    }
}

/// Plain CLuP from `x0` on a prepared context, radii `multiplier(i) * r_plt`.
pub fn run_with_context(
    ctx: &SolverContext,
    config: &ClupConfig,
    x0: &DVector<f64>,
    seed: u64,
    r_plt: f64,
    halfspaces: &[Halfspace],
) -> Result<ClupResult> {
    config.validate()?;
    let inst = ctx.instance();
    if x0.len() != inst.n {
        return Err(Error::InvalidDimension(format!("x0 has {} entries, n = {}", x0.len(), inst.n)));
    }
    let norm = x0.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Domain("x0 must be a nonzero finite vector".into()));
    }
    let mut x = x0 / norm;
    // c2 starts at delta^2 with delta = 1e10, so the first step never stops
    let mut prev = 1e10;
    let mut warm: Option<ActiveSet> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut x_inner = x.clone();
    let mut iterates = Vec::new();
    for i in 0..config.i_max {
        let r = config.multiplier(i) * r_plt;
        let rep = ctx.solve(&x, r, halfspaces, warm.as_ref(), &config.solver)?;
        match rep.status {
            SolverStatus::Optimal => {}
            SolverStatus::Infeasible => {
                return Err(Error::Infeasible {
                    radius: r,
                    min_residual: rep.residual,
                })
            }
            SolverStatus::MaxIterations => {
                return Err(Error::NotConverged {
                    what: "inner solver",
                    evals: rep.iterations,
                })
            }
        }
        let obj = x.dot(&rep.x_star);
        let delta = (obj - prev).abs();
        trace.push(IterationRecord {
            c2: obj * obj,
            c1: inst.x_sol.dot(&rep.x_star),
            delta,
            inner_iterations: rep.iterations,
        });
        prev = obj;
        x = &rep.x_star / rep.x_star.norm();
        if config.record_iterates {
            iterates.push(rep.x_star.clone());
        }
        x_inner = rep.x_star;
        warm = Some(rep.active);
        if delta < config.delta_min {
            converged = true;
            break;
        }
    }
    Ok(ClupResult {
        seed,
        config: config.clone(),
        r_plt,
        x_clup: sign_round(&x_inner),
        stats: overlap_stats(&x_inner, inst)?,
        x_final: x,
        x_inner,
        trace,
        iterates,
        converged,
    })
}

/// Starting point for a run without an explicit `x0`.
fn initial_point(ctx: &SolverContext, config: &ClupConfig, seed: u64) -> Result<DVector<f64>> {
    match config.warm_start {
        WarmStart::RandomSign => Ok(random_sign_vector(ctx.instance().n, &mut rng_from_seed(seed))),
        WarmStart::PolytopeRound | WarmStart::PolytopeWithOverlapConstraint => {
            Ok(sign_round(&ctx.min_box_residual()?.x_plt))
        }
    }
}

/// CLuP on `instance`. Without `x0` the start is drawn from `seed` (or taken
/// from the polytope solution, per `config.warm_start`).
pub fn clup_run(instance: &ProblemInstance, config: &ClupConfig, x0: Option<&DVector<f64>>, seed: u64) -> Result<ClupResult> {
    config.validate()?;
    if x0.is_none() && config.warm_start == WarmStart::PolytopeWithOverlapConstraint {
        return clup_warmstart_polytope(instance, config);
    }
    let ctx = SolverContext::new(instance);
    let r_plt = base_radius(&ctx, config)?;
    let start = match x0 {
        Some(x) => x.clone(),
        None => initial_point(&ctx, config, seed)?,
    };
    run_with_context(&ctx, config, &start, seed, r_plt, &[])
}

/// Best of `num_starts` runs by final `c2`. Start `j` uses
/// `derive_seed(seed, j)`, except start 0 which uses `seed` itself.
pub fn clup_multistart(instance: &ProblemInstance, config: &ClupConfig, num_starts: usize, seed: u64) -> Result<ClupResult> {
    config.validate()?;
    if num_starts == 0 {
        return Err(Error::InvalidConfig("num_starts must be >= 1".into()));
    }
    let ctx = SolverContext::new(instance);
    let r_plt = base_radius(&ctx, config)?;
    multistart_with_context(&ctx, config, num_starts, seed, r_plt)
}

pub fn multistart_with_context(
    ctx: &SolverContext,
    config: &ClupConfig,
    num_starts: usize,
    seed: u64,
    r_plt: f64,
) -> Result<ClupResult> {
    let mut best: Option<ClupResult> = None;
    for j in 0..num_starts {
        let s = if j == 0 { seed } else { derive_seed(seed, j as u64) };
        let x0 = random_sign_vector(ctx.instance().n, &mut rng_from_seed(s));
        let res = run_with_context(ctx, config, &x0, s, r_plt, &[])?;
        if best.as_ref().is_none_or(|b| res.stats.c2 > b.stats.c2) {
            best = Some(res);
        }
    }
    Ok(best.expect("num_starts >= 1"))
}

/// Polytope warm start with the overlap constraint, `c1_plt` taken from the
/// asymptotic polytope prediction.
pub fn clup_warmstart_polytope(instance: &ProblemInstance, config: &ClupConfig) -> Result<ClupResult> {
    let params = RdtParams::new(instance.m as f64 / instance.n as f64, instance.sigma)?;
    let c1_plt = r_plt_theory(&params)?.point.c1;
    let ctx = SolverContext::new(instance);
    let r_plt = base_radius(&ctx, config)?;
    warmstart_with_context(&ctx, config, c1_plt, r_plt)
}

/// Stage 1 runs from `x_plt` with `x_plt' x >= c1_plt`, stage 2 is plain
/// CLuP from the stage-1 iterate. The returned trace concatenates both.
pub fn warmstart_with_context(ctx: &SolverContext, config: &ClupConfig, c1_plt: f64, r_plt: f64) -> Result<ClupResult> {
    config.validate()?;
    let x_plt = ctx.min_box_residual()?.x_plt.clone();
    let constraint = [Halfspace::new(x_plt.clone(), c1_plt)];
    let first = run_with_context(ctx, config, &x_plt, 0, r_plt, &constraint)?;
    let mut second = run_with_context(ctx, config, &first.x_final, 0, r_plt, &[])?;
    let mut trace = first.trace;
    trace.append(&mut second.trace);
    second.trace = trace;
    let mut iterates = first.iterates;
    iterates.append(&mut second.iterates);
    second.iterates = iterates;
    Ok(second)
}

/// CLuP with per-iteration radii from `config.radius_schedule`.
pub fn clup_radius_schedule(instance: &ProblemInstance, config: &ClupConfig, seed: u64) -> Result<ClupResult> {
    if config.radius_schedule.is_none() {
        return Err(Error::InvalidConfig("radius schedule missing".into()));
    }
    clup_run(instance, config, None, seed)
}
