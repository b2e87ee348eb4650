//! One function per command, each turning an [`ExperimentConfig`] into rows.
//! A failing computation marks its own row and the run goes on.

use clup_core::rdt::clup::{
    c1_upper, clup_rdt_predict_with, find_stationary_points, r_plt_theory, r_sc_optimal_perr_with, scan_xi,
    PolytopePrediction, ScanAxis,
};
use clup_core::rdt::first_iter::{escape_check, first_iter_solve};
use clup_core::rdt::ml::{lifted_ml_row, ml_critical_snrs, ml_minimize, MlRdtSolution};
use clup_core::rdt::RdtParams;
use clup_core::Result;

use crate::cli::{ExperimentConfig, Task};
use crate::montecarlo::{aggregate, first_step_summary, run_trial, run_trials, Baselines};
use crate::records::{Provenance, RecordKind, ResultRecord, BUILD_VERSION};

pub fn provenance(config: &ExperimentConfig) -> Provenance {
    let timestamp = config.timestamp.then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    Provenance {
        version: BUILD_VERSION.to_string(),
        seed: config.seed,
        timestamp,
    }
}

pub fn run(config: &ExperimentConfig) -> Vec<ResultRecord> {
    match &config.task {
        Task::Predict => cmd_predict(config),
        Task::Simulate { baselines, ml_restarts } => cmd_simulate(config, baselines.then_some(Baselines { ml_restarts: *ml_restarts })),
        Task::Ml { critical } => cmd_ml(config, *critical),
        Task::Stationary { radius } => cmd_stationary(config, radius.as_deref()),
        Task::Scan { axis, fixed, grid } => cmd_scan(config, *axis, fixed, grid.as_deref()),
        Task::FirstIter { radius, simulate } => cmd_first_iter(config, radius.as_deref(), *simulate),
    }
}

/// Maps `f` over the SNR list on the configured number of threads,
/// keeping list order.
fn per_snr<T: Send>(config: &ExperimentConfig, f: impl Fn(f64) -> T + Sync) -> Vec<T> {
    use rayon::prelude::*;
    let work = || config.snr_db_list.par_iter().map(|&s| f(s)).collect();
    match rayon::ThreadPoolBuilder::new().num_threads(config.workers).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

fn params(config: &ExperimentConfig, snr_db: f64) -> Result<RdtParams> {
    RdtParams::from_snr_db(config.alpha, snr_db)
}

/// Radii for commands that take either explicit radii or `r_sc * r_plt`.
fn radii(config: &ExperimentConfig, plt: &PolytopePrediction, explicit: Option<&[f64]>) -> Vec<(Option<f64>, f64)> {
    match explicit {
        Some(rs) => rs.iter().map(|&r| (None, r)).collect(),
        None => config.r_sc_list.iter().map(|&s| (Some(s), s * plt.r_plt)).collect(),
    }
}

pub fn cmd_predict(config: &ExperimentConfig) -> Vec<ResultRecord> {
    let prov = provenance(config);
    per_snr(config, |snr| {
        let base = || ResultRecord::new(RecordKind::Prediction, &prov).input("alpha", config.alpha).input("snr_db", snr);
        let shared = (|| -> Result<(RdtParams, PolytopePrediction, MlRdtSolution)> {
            let p = params(config, snr)?;
            let plt = r_plt_theory(&p)?;
            let ml = ml_minimize(&p)?;
            Ok((p, plt, ml))
        })();
        let (p, plt, ml) = match shared {
            Ok(v) => v,
            Err(e) => {
                return config
                    .r_sc_list
                    .iter()
                    .map(|&s| {
                        let mut rec = base().input("r_sc", s);
                        rec.fail(&e);
                        rec
                    })
                    .collect::<Vec<_>>()
            }
        };
        let optimal = r_sc_optimal_perr_with(&p, &plt, ml.xi_global);
        config
            .r_sc_list
            .iter()
            .map(|&s| {
                let mut rec = base().input("r_sc", s);
                rec.output("r_plt", plt.r_plt);
                rec.output("plt_c2", plt.point.c2);
                rec.output("plt_c1", plt.point.c1);
                rec.output("plt_perr", plt.perr);
                match clup_rdt_predict_with(&p, &plt, s) {
                    Ok(pred) => {
                        rec.output("c2", pred.point.c2);
                        rec.output("c1", pred.point.c1);
                        rec.output("gamma", pred.point.gamma);
                        rec.output("nu", pred.point.nu);
                        rec.output("xi", pred.point.xi);
                        rec.output("perr", pred.perr);
                        rec.output("n_roots", pred.roots.len() as f64);
                        rec.output("saturated", if pred.saturated { 1.0 } else { 0.0 });
                    }
                    Err(e) => rec.fail(e),
                }
                rec.output("ml_xi", ml.xi_global);
                rec.output("ml_c1", ml.c1_global);
                rec.output("ml_perr", ml.perr);
                match &optimal {
                    Ok(o) => {
                        rec.output("opt_r_sc", o.r_sc);
                        rec.output("opt_perr", o.perr);
                        rec.output("r_sc_upper", o.r_sc_upper);
                    }
                    Err(e) => rec.fail(e),
                }
                rec
            })
            .collect()
    })
    .into_iter()
    .flatten()
    .collect()
}

pub fn cmd_simulate(config: &ExperimentConfig, baselines: Option<Baselines>) -> Vec<ResultRecord> {
    let prov = provenance(config);
    let mut out = Vec::new();
    for &snr in &config.snr_db_list {
        for &r_sc in &config.r_sc_list {
            let clup = config.clup.clone().with_r_sc(r_sc);
            let base = || {
                ResultRecord::new(RecordKind::Simulation, &prov)
                    .input("alpha", config.alpha)
                    .input("snr_db", snr)
                    .input("r_sc", r_sc)
                    .input("n", config.n)
            };
            let results = run_trials(config.trials, config.workers, |t| {
                run_trial(config.n, config.alpha, snr, &clup, config.seed, t, baselines)
            });
            let mut ok = Vec::new();
            let mut failed = 0;
            for (t, res) in results {
                match res {
                    Ok(o) => {
                        let mut rec = base().input("trial", t).input("instance_seed", o.instance_seed);
                        rec.output("c2", o.c2);
                        rec.output("c1", o.c1);
                        rec.output("ber", o.bit_errors as f64 / config.n as f64);
                        rec.output("iterations", o.iterations as f64);
                        rec.output("converged", if o.converged { 1.0 } else { 0.0 });
                        if let (Some(p), Some(m)) = (o.polytope_errors, o.ml_errors) {
                            rec.output("polytope_ber", p as f64 / config.n as f64);
                            rec.output("ml_ber", m as f64 / config.n as f64);
                        }
                        out.push(rec);
                        ok.push(o);
                    }
                    Err(e) => {
                        eprintln!("snr {snr} dB, r_sc {r_sc}, trial {t}: {e}; excluded");
                        failed += 1;
                    }
                }
            }
            let agg = aggregate(&ok, failed, config.n);
            let mut rec = base().input("trials", config.trials);
            rec.output("trials_ok", agg.trials_ok as f64);
            rec.output("trials_failed", agg.trials_failed as f64);
            rec.output("mean_c2", agg.mean_c2);
            rec.output("se_c2", agg.se_c2);
            rec.output("mean_c1", agg.mean_c1);
            rec.output("se_c1", agg.se_c1);
            rec.output("ber", agg.ber);
            rec.output("ber_se", agg.ber_se);
            rec.output("mean_iterations", agg.mean_iterations);
            rec.output("median_iterations", agg.median_iterations);
            rec.output("converged_fraction", agg.converged_fraction);
            if let (Some(p), Some(m)) = (agg.polytope_ber, agg.ml_ber) {
                rec.output("polytope_ber", p.0);
                rec.output("polytope_ber_se", p.1);
                rec.output("ml_ber", m.0);
                rec.output("ml_ber_se", m.1);
            }
            if agg.trials_ok == 0 {
                rec.fail("every trial failed");
            }
            out.push(rec);
        }
    }
    out
}

pub fn cmd_ml(config: &ExperimentConfig, critical: bool) -> Vec<ResultRecord> {
    let prov = provenance(config);
    let mut out: Vec<ResultRecord> = per_snr(config, |snr| {
        let mut rec = ResultRecord::new(RecordKind::Ml, &prov).input("alpha", config.alpha).input("snr_db", snr);
        match params(config, snr).and_then(|p| ml_minimize(&p)) {
            Ok(sol) => {
                rec.output("xi", sol.xi_global);
                rec.output("c1", sol.c1_global);
                rec.output("nu", sol.nu_hat);
                rec.output("perr", sol.perr);
                rec.output("n_minima", sol.local_minima.len() as f64);
                for (k, m) in sol.local_minima.iter().enumerate() {
                    rec.output(&format!("min{}_c1", k + 1), m.c1);
                    rec.output(&format!("min{}_xi", k + 1), m.xi);
                    rec.output(&format!("min{}_perr", k + 1), m.perr);
                }
                if let Some(l) = lifted_ml_row(snr) {
                    rec.output("lifted_xi", l.xi.unwrap_or(f64::NAN));
                    rec.output("lifted_perr", l.perr);
                }
            }
            Err(e) => rec.fail(e),
        }
        rec
    });
    if critical {
        let mut rec = ResultRecord::new(RecordKind::Ml, &prov).input("alpha", config.alpha);
        match ml_critical_snrs(config.alpha) {
            Ok(c) => {
                rec.output("multi_onset_db", c.multi_onset_db.unwrap_or(f64::NAN));
                rec.output("discontinuity_db", c.discontinuity_db.unwrap_or(f64::NAN));
            }
            Err(e) => rec.fail(e),
        }
        out.push(rec);
    }
    out
}

pub fn cmd_stationary(config: &ExperimentConfig, explicit: Option<&[f64]>) -> Vec<ResultRecord> {
    let prov = provenance(config);
    per_snr(config, |snr| {
        let base = || ResultRecord::new(RecordKind::Stationary, &prov).input("alpha", config.alpha).input("snr_db", snr);
        let (p, plt) = match params(config, snr).and_then(|p| Ok((p, r_plt_theory(&p)?))) {
            Ok(v) => v,
            Err(e) => {
                let mut rec = base();
                rec.fail(e);
                return vec![rec];
            }
        };
        let mut rows = Vec::new();
        for (r_sc, r) in radii(config, &plt, explicit) {
            let head = || {
                let rec = base().input("radius", r);
                match r_sc {
                    Some(s) => rec.input("r_sc", s),
                    None => rec,
                }
            };
            match find_stationary_points(&p, r) {
                Ok(points) if points.is_empty() => {
                    let mut rec = head();
                    rec.output("n_points", 0.0);
                    rows.push(rec);
                }
                Ok(points) => {
                    for (k, pt) in points.iter().enumerate() {
                        let mut rec = head().input("point", k);
                        rec.output("n_points", points.len() as f64);
                        rec.output("xi", pt.xi);
                        rec.output("c2", pt.c2);
                        rec.output("c1", pt.c1);
                        rec.output("nu", pt.nu);
                        rec.output("gamma", pt.gamma);
                        rec.output("gamma1", pt.gamma1);
                        rec.output("grad_norm", pt.grad_norm);
                        rows.push(rec);
                    }
                }
                Err(e) => {
                    let mut rec = head();
                    rec.fail(e);
                    rows.push(rec);
                }
            }
        }
        rows
    })
    .into_iter()
    .flatten()
    .collect()
}

fn default_grid(axis: ScanAxis, fixed: f64) -> Vec<f64> {
    let (lo, hi, k) = match axis {
        ScanAxis::C1 => (0.5, c1_upper(fixed) - 1e-6, 400),
        ScanAxis::C2 => (0.5, 0.999, 200),
    };
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

pub fn cmd_scan(config: &ExperimentConfig, axis: ScanAxis, fixed: &[f64], grid: Option<&[f64]>) -> Vec<ResultRecord> {
    let prov = provenance(config);
    let axis_name = match axis {
        ScanAxis::C1 => "c1",
        ScanAxis::C2 => "c2",
    };
    // a scan along c2 has nothing to hold fixed
    let fixed: Vec<f64> = match axis {
        ScanAxis::C1 => fixed.to_vec(),
        ScanAxis::C2 => vec![f64::NAN],
    };
    per_snr(config, |snr| {
        let mut rows = Vec::new();
        for &f in &fixed {
            let base = || {
                let rec = ResultRecord::new(RecordKind::Scan, &prov)
                    .input("alpha", config.alpha)
                    .input("snr_db", snr)
                    .input("axis", axis_name);
                if f.is_nan() {
                    rec
                } else {
                    rec.input("fixed", f)
                }
            };
            let g = grid.map(<[f64]>::to_vec).unwrap_or_else(|| default_grid(axis, f));
            match params(config, snr).and_then(|p| scan_xi(&p, axis, f, &g)) {
                Ok(scan) => {
                    for (x, v) in scan.grid.iter().zip(&scan.values) {
                        let mut rec = base();
                        rec.output("grid", *x);
                        rec.output("xi", *v);
                        rows.push(rec);
                    }
                    let mut rec = base().input("summary", 1u64);
                    rec.output("n_minima", scan.local_minima.len() as f64);
                    for (k, (x, v)) in scan.local_minima.iter().enumerate() {
                        rec.output(&format!("min{}_at", k + 1), *x);
                        rec.output(&format!("min{}_xi", k + 1), *v);
                    }
                    rows.push(rec);
                }
                Err(e) => {
                    let mut rec = base().input("summary", 1u64);
                    rec.fail(e);
                    rows.push(rec);
                }
            }
        }
        rows
    })
    .into_iter()
    .flatten()
    .collect()
}

pub fn cmd_first_iter(config: &ExperimentConfig, explicit: Option<&[f64]>, simulate: bool) -> Vec<ResultRecord> {
    let prov = provenance(config);
    let mut out = Vec::new();
    for &snr in &config.snr_db_list {
        let base = || {
            ResultRecord::new(RecordKind::FirstIter, &prov)
                .input("alpha", config.alpha)
                .input("snr_db", snr)
                .input("rho", config.rho)
        };
        let (p, plt) = match params(config, snr).and_then(|p| Ok((p, r_plt_theory(&p)?))) {
            Ok(v) => v,
            Err(e) => {
                let mut rec = base();
                rec.fail(e);
                out.push(rec);
                continue;
            }
        };
        for (r_sc, r) in radii(config, &plt, explicit) {
            let mut rec = base().input("radius", r);
            if let Some(s) = r_sc {
                rec = rec.input("r_sc", s);
            }
            match first_iter_solve(&p, r, config.rho) {
                Ok(sol) => {
                    rec.output("nu", sol.nu_hat);
                    rec.output("gamma", sol.gamma_hat);
                    rec.output("c1z", sol.c1z_hat);
                    rec.output("s1", sol.s1_hat);
                    rec.output("xi1", sol.xi1);
                    rec.output("perr1", sol.perr1);
                    rec.output("norm_sq", sol.e_norm_sq);
                    rec.output("overlap", sol.e_overlap);
                    match find_stationary_points(&p, r) {
                        Ok(pts) => {
                            let lowest = pts.iter().map(|q| q.c2).fold(f64::NAN, f64::min);
                            rec.output("lowest_stationary_c2", lowest);
                            rec.output("escapes", if escape_check(&sol, &pts) { 1.0 } else { 0.0 });
                        }
                        Err(e) => rec.fail(e),
                    }
                }
                Err(e) => rec.fail(e),
            }
            if simulate {
                let clup = config.clup.clone();
                let results = run_trials(config.trials, config.workers, |t| {
                    crate::montecarlo::first_step_trial(config.n, config.alpha, snr, &clup, Some(r), config.seed, t)
                });
                let mut samples = Vec::new();
                for (t, res) in results {
                    match res {
                        Ok(s) => samples.push(s),
                        Err(e) => eprintln!("snr {snr} dB, radius {r}, trial {t}: {e}; excluded"),
                    }
                }
                rec.output("sim_trials_ok", samples.len() as f64);
                let names = ["s1", "xi1", "perr1", "norm_sq", "overlap"];
                for (name, (m, se)) in names.iter().zip(first_step_summary(&samples)) {
                    rec.output(&format!("sim_{name}"), m);
                    rec.output(&format!("sim_{name}_se"), se);
                }
                if samples.is_empty() {
                    rec.fail("every first-step trial failed");
                }
            }
            out.push(rec);
        }
    }
    out
}
