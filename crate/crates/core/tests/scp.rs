mod common;

use driftsafe::dynamics::{stm_full, stm_planar, stm_position_rows, OrbitContext};
use driftsafe::scp::*;
use driftsafe::uq::{closed_loop_dispersion, drift_grid, UqOptions};
use driftsafe::Error;
use nalgebra::{Vector2, Vector4};

fn boundary(ctx: &OrbitContext) -> Boundary {
    Boundary { x_i: Vector4::new(-4000.0, -17500.0, 0.0, 1.5 * ctx.n * 4000.0), x_f: Vector4::new(0.0, 750.0, 0.0, 0.0) }
}

fn chance() -> ChanceConfig {
    ChanceConfig { r_kos: 150.0, beta: 0.99, t_safe: 3600.0, gamma: 60.0, gamma_verify: 60.0, buffers: true }
}

fn fuel() -> ScpConfig {
    ScpConfig { tf0: 7200.0, tf_max: Some(7200.0), ..Default::default() }
}

fn control() -> ScpConfig {
    ScpConfig {
        tf_fixed: true,
        waypoints: vec![(1, Vector2::new(-1400.0, -7500.0)), (2, Vector2::new(-1400.0, -750.0))],
        ..fuel()
    }
}

fn min_time(dv_max: f64) -> ScpConfig {
    ScpConfig { objective: Objective::MinTime, dv_max: Some(dv_max), ..fuel() }
}

#[test]
fn initial_reference_examples() {
    let (p, dxi) = initial_reference(&Vector2::new(0.0, 0.0), &Vector2::new(2000.0, 2000.0), 7200.0, 3).unwrap();
    assert_eq!(p[0], Vector2::new(0.0, 0.0));
    assert_eq!(p[1], Vector2::new(1000.0, 1000.0));
    assert_eq!(p[2], Vector2::new(2000.0, 2000.0));
    assert_eq!(dxi, 3600.0);
    let (_, dxi) = initial_reference(&Vector2::zeros(), &Vector2::new(1.0, 0.0), 120.0 * 60.0, 5).unwrap();
    assert_eq!(dxi, 30.0 * 60.0);
    assert!(initial_reference(&Vector2::zeros(), &Vector2::zeros(), 60.0, 1).is_err());
}

#[test]
fn equilibrium_needs_no_control() {
    let ctx = common::leo();
    let hold = Vector4::new(0.0, 750.0, 0.0, 0.0);
    let b = Boundary { x_i: hold, x_f: hold };
    let ch = ChanceConfig { buffers: false, ..chance() };
    let r = solve_scp(&b, 4, &ScpConfig { tf0: 3600.0, ..Default::default() }, &ch, &common::opt_config(), &ctx).unwrap();
    assert!(r.converged);
    assert!(r.trajectory.u.iter().all(|u| u.norm() < 1e-7), "{:?}", r.trajectory.u);
}

#[test]
fn converged_solutions_are_dynamically_exact_and_safe() {
    let ctx = common::leo();
    let b = boundary(&ctx);
    let disp = common::opt_config();
    let ch = chance();
    for cfg in [fuel(), control(), min_time(2.66)] {
        let r = solve_scp(&b, 4, &cfg, &ch, &disp, &ctx).unwrap();
        let (dr, dv) = r.trajectory.residuals(&b, &ctx);
        assert!(dr < 1e-6 && dv < 1e-9, "residuals {dr} m, {dv} m/s");
        assert!(r.safety.pass);

        // Independent buffer evaluation on the dense grid.
        let plan = r.trajectory.to_plan(&b);
        let dispersed =
            closed_loop_dispersion(&plan, &disp, &ctx, &UqOptions { history_step: 0.0, ..Default::default() }).unwrap();
        let c = ch.c().unwrap();
        let grid = drift_grid(ch.t_safe, 60.0).unwrap();
        let kf = r.trajectory.n_nodes() - 1;
        for k in 0..kf {
            let p = dispersed.post_burn(k).unwrap();
            for &tau in &grid {
                let mean = stm_position_rows(tau, &ctx) * r.trajectory.x[k];
                let phi_r = stm_full(tau, &ctx).fixed_rows::<3>(0).into_owned();
                let pos = phi_r * p * phi_r.transpose();
                let rb = c * pos.symmetric_eigenvalues().max().sqrt();
                assert!(mean.norm() >= ch.r_kos + rb, "node {k} tau {tau}: {} < {}", mean.norm(), ch.r_kos + rb);
            }
        }

        if cfg.tf_fixed {
            assert!((r.trajectory.tf() - 7200.0).abs() < 1e-6);
        }
        if let Some(cap) = cfg.dv_max {
            assert!(r.trajectory.total_dv() <= cap * (1.0 + 1e-6));
        }
    }
}

#[test]
fn trust_region_is_never_exceeded() {
    let ctx = common::leo();
    let r = solve_scp(&boundary(&ctx), 4, &min_time(2.66), &chance(), &common::opt_config(), &ctx).unwrap();
    let mut checked = 0;
    for rec in r.history.iter().filter(|h| h.stage == Stage::Scvx) {
        for (dt, dt0) in rec.dt.iter().zip(&rec.dt_reference) {
            assert!((dt - dt0).abs() <= rec.phi * dt0 * (1.0 + 1e-7) + 1e-9, "iter {}: {dt} from {dt0}", rec.iter);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn chance_constraints_only_cost_fuel() {
    let ctx = common::leo();
    let b = boundary(&ctx);
    let disp = common::opt_config();
    for cfg in [fuel(), control()] {
        let with = solve_scp(&b, 4, &cfg, &chance(), &disp, &ctx).unwrap();
        let without = solve_scp(&b, 4, &cfg, &ChanceConfig { buffers: false, ..chance() }, &disp, &ctx).unwrap();
        let (a, b) = (without.trajectory.total_dv(), with.trajectory.total_dv());
        assert!(a <= b * (1.0 + cfg.tol_obj), "{a} > {b}");
    }
}

#[test]
fn objective_never_increases_on_a_feasible_path() {
    // Far from the keep-out sphere every reference is feasible, so accepted
    // steps must not raise the objective.
    let ctx = common::leo();
    let b = Boundary { x_i: Vector4::new(-1000.0, -9000.0, 0.0, 0.0), x_f: Vector4::new(-1000.0, -3000.0, 0.5, 0.0) };
    let ch = ChanceConfig { r_kos: 10.0, t_safe: 600.0, buffers: false, ..chance() };
    let cfg = ScpConfig { tf0: 3000.0, tf_max: Some(4000.0), ..Default::default() };
    let r = solve_scp(&b, 4, &cfg, &ch, &common::opt_config(), &ctx).unwrap();
    let accepted: Vec<f64> = r.history.iter().filter(|h| h.accepted).map(|h| h.objective).collect();
    assert!(accepted.len() > 2);
    for w in accepted.windows(2) {
        assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn single_count_search_matches_a_direct_solve() {
    let ctx = common::leo();
    let b = boundary(&ctx);
    let disp = common::opt_config();
    let direct = solve_scp(&b, 4, &fuel(), &chance(), &disp, &ctx).unwrap();
    let search = grid_search_burn_count(&b, &[4], &fuel(), &chance(), &disp, &ctx).unwrap();
    assert_eq!(search.best.trajectory, direct.trajectory);
    assert_eq!(search.table.len(), 1);
}

#[test]
fn search_returns_the_argmin() {
    let ctx = common::leo();
    let b = boundary(&ctx);
    let s = grid_search_burn_count(&b, &[3, 4, 5], &fuel(), &chance(), &common::opt_config(), &ctx).unwrap();
    let best = s.best.trajectory.total_dv();
    for (n, j, status) in &s.table {
        if status.starts_with("converged") {
            assert!(best <= j.unwrap() + 1e-9, "N = {n}: {j:?} beats {best}");
        }
    }
    assert!(grid_search_burn_count(&b, &[], &fuel(), &chance(), &common::opt_config(), &ctx).is_err());
}

#[test]
fn two_burn_transfer_plateaus() {
    let ctx = common::leo();
    let ch = ChanceConfig { r_kos: 10.0, t_safe: 600.0, buffers: false, ..chance() };
    let (xi, xf, tf) = (Vector4::new(-500.0, -3000.0, 0.0, 0.0), Vector4::new(0.0, -1000.0, 0.0, 0.0), 1500.0);
    let b = Boundary { x_i: xi, x_f: xf };
    // Direct two-impulse Lambert transfer through the CW STM.
    let phi = stm_planar(tf, &ctx);
    let rv = phi.fixed_view::<2, 2>(0, 2).into_owned();
    let v0 = rv.try_inverse().unwrap() * (xf.fixed_rows::<2>(0) - phi.fixed_view::<2, 2>(0, 0) * xi.fixed_rows::<2>(0));
    let vf = phi.fixed_view::<2, 2>(2, 0) * xi.fixed_rows::<2>(0) + phi.fixed_view::<2, 2>(2, 2) * v0;
    let lambert = (v0 - xi.fixed_rows::<2>(2)).norm() + (xf.fixed_rows::<2>(2) - vf).norm();

    let cfg = ScpConfig { tf0: tf, tf_max: Some(tf), tf_fixed: true, ..Default::default() };
    let s = grid_search_burn_count(&b, &[2, 3, 4, 5], &cfg, &ch, &common::opt_config(), &ctx).unwrap();
    for (n, j, _) in &s.table {
        assert!((j.unwrap() - lambert).abs() < 1e-6 * lambert, "N = {n}: {j:?} vs {lambert}");
    }
    assert_eq!(s.best.trajectory.n_nodes(), 2);
}

#[test]
fn invalid_configurations_are_rejected() {
    let ctx = common::leo();
    let b = boundary(&ctx);
    let disp = common::opt_config();
    let bad_phi = ScpConfig { phi: 1.5, ..fuel() };
    assert!(matches!(solve_scp(&b, 4, &bad_phi, &chance(), &disp, &ctx), Err(Error::Domain(_))));
    let bad_wp = ScpConfig { waypoints: vec![(3, Vector2::zeros())], ..control() };
    assert!(matches!(solve_scp(&b, 4, &bad_wp, &chance(), &disp, &ctx), Err(Error::Domain(_))));
    let bad_beta = ChanceConfig { beta: 1.0, ..chance() };
    assert!(solve_scp(&b, 4, &fuel(), &bad_beta, &disp, &ctx).is_err());
}
