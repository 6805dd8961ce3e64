mod common;

use common::*;
use driftsafe::dynamics::{stm_full, State3};
use driftsafe::linalg::sample_covariance;
use driftsafe::stochastics::{standard_normal6, trial_rng, GatesParams, NavProfile};
use driftsafe::uq::*;
use nalgebra::{Matrix6, Vector3, Vector6};

fn position_trace(p: &Matrix6<f64>) -> f64 {
    p.fixed_view::<3, 3>(0, 0).trace()
}

#[test]
fn reconstructs_maneuver_table() {
    let ctx = leo();
    let plan = two_impulse_plan(&waypoints(), &ctx).unwrap();
    assert_eq!(plan.burns.len(), 4);
    for (burn, (dv, mag, t_min)) in plan.burns.iter().zip(BURN_TABLE) {
        for (i, d) in dv.iter().enumerate() {
            assert!((burn.dv[i] - d).abs() < 5e-3, "{} component {i}: {} vs {d}", burn.label, burn.dv[i]);
        }
        assert!((burn.dv.norm() - mag).abs() < 5e-3);
        assert!((burn.t - t_min * 60.0).abs() < 1e-9);
    }
    assert!((plan.total_dv() - 3.2031).abs() < 1e-2);
}

#[test]
fn nominal_plan_visits_waypoints() {
    let ctx = leo();
    let wps = waypoints();
    let plan = two_impulse_plan(&wps, &ctx).unwrap();
    let states = plan.nominal_states(&ctx);
    for (j, wp) in wps.iter().enumerate().skip(1) {
        let (pre, _) = states[j];
        assert!((pre.fixed_rows::<3>(0) - wp.position).norm() < 1e-6, "{}", wp.label);
    }
    let (_, last) = states[3];
    assert!(last.fixed_rows::<3>(3).norm() < 1e-12);
}

#[test]
fn covariance_propagation_matches_sampling() {
    let ctx = leo();
    let p0 = p_x0();
    let dt = 35.0 * 60.0;
    let analytic = propagate_covariance(&p0, dt, &ctx);
    let s0 = driftsafe::linalg::psd_sqrt(&p0).unwrap();
    let phi = stm_full(dt, &ctx);
    let mut rng = trial_rng(11, 0);
    let samples: Vec<Vector6<f64>> = (0..100_000).map(|_| phi * (s0 * standard_normal6(&mut rng))).collect();
    let sampled = sample_covariance(&samples);
    let rel = (sampled - analytic).norm() / analytic.norm();
    assert!(rel < 0.03, "relative Frobenius error {rel}");
    assert_eq!(propagate_covariance(&p0, 0.0, &ctx), p0);
    assert_eq!(propagate_covariance(&Matrix6::zeros(), dt, &ctx), Matrix6::zeros());
}

#[test]
fn zero_dispersion_is_a_point_mass() {
    let ctx = leo();
    let plan = two_impulse_plan(&waypoints(), &ctx).unwrap();
    let cfg = DispersionConfig::new(Matrix6::zeros(), NavProfile::zero(), GatesParams::default());
    let opts = UqOptions { mode: UqMode::MonteCarlo, trials: 50, seed: 3, history_step: 600.0, keep_trials: 5 };
    let r = closed_loop_dispersion(&plan, &cfg, &ctx, &opts).unwrap();
    assert!(r.dv.total.std < 1e-9);
    assert!((r.dv.total.mean - plan.total_dv()).abs() < 1e-9);
    let ens = r.ensemble.unwrap();
    for trial in &ens.states {
        assert!((trial.last().unwrap() - ens.states[0].last().unwrap()).norm() < 1e-9);
    }
}

#[test]
fn lincov_agrees_with_monte_carlo() {
    let ctx = leo();
    let plan = two_impulse_plan(&waypoints(), &ctx).unwrap();
    let cfg = config();
    let lin = closed_loop_dispersion(&plan, &cfg, &ctx, &UqOptions::default()).unwrap();
    let opts = UqOptions { mode: UqMode::MonteCarlo, trials: 5000, seed: 42, ..Default::default() };
    let mc = closed_loop_dispersion(&plan, &cfg, &ctx, &opts).unwrap();
    for j in 0..plan.burns.len() {
        for (a, b) in [(lin.pre_burn(j), mc.pre_burn(j)), (lin.post_burn(j), mc.post_burn(j))] {
            let (a, b) = (position_trace(a.unwrap()), position_trace(b.unwrap()));
            assert!((b - a).abs() / a < 0.10, "burn {j}: lincov {a} vs mc {b}");
        }
    }
    let hopts = UqOptions { mode: UqMode::Hybrid, trials: 5000, seed: 43, ..Default::default() };
    let hyb = closed_loop_dispersion(&plan, &cfg, &ctx, &hopts).unwrap();
    let (a, b) = (hyb.dv.total.std, mc.dv.total.std);
    assert!((b - a).abs() / b < 0.10, "total dv std hybrid {a} vs mc {b}");
    let (a, b) = (hyb.dv.total.mean, mc.dv.total.mean);
    assert!((b - a).abs() / b < 0.02, "total dv mean hybrid {a} vs mc {b}");
    let contained = mc.nav_containment.unwrap();
    assert!((contained - 0.9973).abs() < 0.002, "containment {contained}");
}

#[test]
fn dispersion_contracts_after_second_burn() {
    let ctx = leo();
    let plan = two_impulse_plan(&waypoints(), &ctx).unwrap();
    let lin = closed_loop_dispersion(&plan, &config(), &ctx, &UqOptions::default()).unwrap();
    let at_br2 = position_trace(lin.pre_burn(1).unwrap());
    let at_br3 = position_trace(lin.pre_burn(2).unwrap());
    assert!(at_br3 < at_br2, "{at_br3} !< {at_br2}");
}

#[test]
fn drift_envelope_matches_sampling() {
    let ctx = leo();
    let x = State3::new(-1400.0, -7500.0, 0.0, 0.0, 2.397, 0.0);
    let p = p_x0();
    let grid = drift_grid(3600.0, 600.0).unwrap();
    let env = free_drift_envelope_full(&[x], &[p], &grid, &ctx).unwrap();
    assert!((env[0].mean_pos - x.fixed_rows::<3>(0)).norm() < 1e-12);
    let s0 = driftsafe::linalg::psd_sqrt(&p).unwrap();
    let mut rng = trial_rng(5, 0);
    let draws: Vec<Vector6<f64>> = (0..10_000).map(|_| s0 * standard_normal6(&mut rng)).collect();
    for pt in &env {
        let phi = stm_full(pt.tau, &ctx);
        let pos: Vec<Vector3<f64>> = draws.iter().map(|d| (phi * (x + d)).fixed_rows::<3>(0).into_owned()).collect();
        let cov = sample_covariance(&pos);
        let lam = cov.symmetric_eigenvalues().max();
        assert!((lam - pt.lambda_max).abs() / pt.lambda_max < 0.05, "tau {}", pt.tau);
        // coelliptic: radial offset unchanged by drift
        assert!((pt.mean_pos[0] + 1400.0).abs() < 1e-3 * 1400.0);
    }
}

#[test]
fn example_plan_is_drift_safe() {
    let ctx = leo();
    let plan = two_impulse_plan(&waypoints(), &ctx).unwrap();
    let lin = closed_loop_dispersion(&plan, &config(), &ctx, &UqOptions::default()).unwrap();
    let (_, states, covs) = plan_drift_nodes(&plan, &lin, &ctx, false).unwrap();
    let grid = drift_grid(3600.0, 60.0).unwrap();
    let env = free_drift_envelope_full(&states, &covs, &grid, &ctx).unwrap();
    let report = verify_drift_safety(&env, 150.0, 3.0).unwrap();
    assert!(report.pass, "min clearance {} at {:?}", report.min_clearance, report.worst);
    let tight = verify_drift_safety(&env, 150.0 + report.min_clearance + 1.0, 3.0).unwrap();
    assert!(!tight.pass);
}

#[test]
fn surface_mean_fails_and_far_mean_clears() {
    let on = DriftPoint { node: 0, tau: 0.0, mean_pos: Vector3::new(150.0, 0.0, 0.0), lambda_max: 1e-6 };
    assert!(!verify_drift_safety(&[on], 150.0, 3.0).unwrap().pass);
    let far = DriftPoint { node: 0, tau: 0.0, mean_pos: Vector3::new(0.0, 300.0, 0.0), lambda_max: 0.0 };
    let r = verify_drift_safety(&[far], 150.0, 3.0).unwrap();
    assert!(r.pass && (r.min_clearance - 150.0).abs() < 1e-12);
}

#[test]
fn hybrid_reuses_lincov_covariance() {
    let ctx = leo();
    let plan = two_impulse_plan(&waypoints(), &ctx).unwrap();
    let lin = closed_loop_dispersion(&plan, &config(), &ctx, &UqOptions::default()).unwrap();
    let opts = UqOptions { mode: UqMode::Hybrid, trials: 2000, seed: 9, ..Default::default() };
    let hyb = closed_loop_dispersion(&plan, &config(), &ctx, &opts).unwrap();
    assert_eq!(lin.history, hyb.history);
    assert!(hyb.dv.total.histogram.is_some());
    assert!(hyb.dv.total.mean > plan.total_dv());
    assert!(hyb.dv.total.p99 > hyb.dv.total.p50);
}
