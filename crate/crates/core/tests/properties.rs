//! Property tests for the special functions, the residual-ball projection
//! and the CLuP iteration.

use clup_core::clup::{base_radius, clup_run, run_with_context, ClupConfig};
use clup_core::inner_solver::{Halfspace, SolverContext};
use clup_core::model::{generate_instance, random_sign_vector, rng_from_seed, snr_db_to_sigma};
use clup_core::numerics::{erf, erfc, erfinv};
use clup_core::rdt::clup::r_plt_theory;
use clup_core::rdt::RdtParams;
use proptest::prelude::*;

proptest! {
    #[test]
    fn erf_and_erfc_sum_to_one(x in -6.0f64..6.0) {
        prop_assert!((erf(x) + erfc(x) - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn erfinv_inverts_erf(x in -3.0f64..3.0) {
        prop_assert!((erfinv(erf(x)).unwrap() - x).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_feasible_and_idempotent(seed in 0u64..1_000_000, shrink in 0.2f64..0.9) {
        let inst = generate_instance(12, 0.8, 0.4, seed).unwrap();
        let ctx = SolverContext::new(&inst);
        let x0 = random_sign_vector(12, &mut rng_from_seed(seed ^ 1));
        // m < n, so every positive radius is reachable
        let r = shrink * inst.residual_norm(&x0);
        let p = ctx.project_residual_ball(&x0, r).unwrap();
        prop_assert!(inst.residual_norm(&p) <= r * (1.0 + 1e-9));
        let q = ctx.project_residual_ball(&p, r).unwrap();
        prop_assert!((&p - &q).amax() <= 1e-10);
    }
}

fn clup_instance(seed: u64, n: usize, snr_db: f64) -> clup_core::model::ProblemInstance {
    generate_instance(n, 0.8, snr_db_to_sigma(snr_db), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn clup_norm_overlap_never_decreases(seed in 0u64..1_000_000, r_sc in 1.05f64..1.6, snr in 8.0f64..15.0) {
        let inst = clup_instance(seed, 60, snr);
        let res = clup_run(&inst, &ClupConfig::default().with_r_sc(r_sc), None, seed).unwrap();
        for w in res.trace.windows(2) {
            prop_assert!(w[1].c2.sqrt() >= w[0].c2.sqrt() - 1e-9, "{:?}", res.trace);
        }
        prop_assert!((res.x_final.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn clup_is_deterministic(seed in 0u64..1_000_000) {
        let inst = clup_instance(seed, 40, 12.0);
        let a = clup_run(&inst, &ClupConfig::default(), None, seed).unwrap();
        let b = clup_run(&inst, &ClupConfig::default(), None, seed).unwrap();
        prop_assert_eq!(a.x_final, b.x_final);
        prop_assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn overlap_constraint_holds_at_every_iterate(seed in 0u64..1_000_000) {
        let inst = clup_instance(seed, 60, 12.0);
        let mut config = ClupConfig::default().with_r_sc(1.3);
        config.record_iterates = true;
        let ctx = SolverContext::new(&inst);
        let r_plt = base_radius(&ctx, &config).unwrap();
        let x_plt = ctx.min_box_residual().unwrap().x_plt.clone();
        let c1_plt = r_plt_theory(&RdtParams::new(0.8, inst.sigma).unwrap()).unwrap().point.c1;
        // never ask for more overlap than the polytope point itself has
        let offset = c1_plt.min(0.9 * x_plt.norm_squared());
        let hs = [Halfspace::new(x_plt.clone(), offset)];
        let res = run_with_context(&ctx, &config, &x_plt, 0, r_plt, &hs).unwrap();
        prop_assert!(!res.iterates.is_empty());
        for x in &res.iterates {
            prop_assert!(x_plt.dot(x) >= offset - 1e-8);
        }
    }

    #[test]
    fn constant_schedule_matches_plain_run(seed in 0u64..1_000_000, r_sc in 1.05f64..1.5) {
        let inst = clup_instance(seed, 40, 12.0);
        let plain = ClupConfig::default().with_r_sc(r_sc);
        let mut scheduled = plain.clone();
        scheduled.radius_schedule = Some(vec![r_sc; 3]);
        let a = clup_run(&inst, &plain, None, seed).unwrap();
        let b = clup_run(&inst, &scheduled, None, seed).unwrap();
        prop_assert_eq!(a.x_final, b.x_final);
        prop_assert_eq!(a.trace, b.trace);
    }
}

#[test]
fn scaled_start_gives_the_same_run() {
    let inst = clup_instance(9, 40, 12.0);
    let x0 = random_sign_vector(40, &mut rng_from_seed(3));
    let a = clup_run(&inst, &ClupConfig::default(), Some(&x0), 0).unwrap();
    let b = clup_run(&inst, &ClupConfig::default(), Some(&(&x0 * 7.5)), 0).unwrap();
    assert!((&a.x_final - &b.x_final).amax() < 1e-12);
}
