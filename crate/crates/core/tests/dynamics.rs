mod common;

use driftsafe::dynamics::*;
use nalgebra::{Matrix4, Matrix6, Vector2, Vector3, Vector4, Vector6};
use proptest::prelude::*;

/// CW right-hand side written out from the equations of motion.
fn cw_rhs(x: &Vector6<f64>, n: f64) -> Vector6<f64> {
    Vector6::new(x[3], x[4], x[5], 3.0 * n * n * x[0] + 2.0 * n * x[4], -2.0 * n * x[3], -n * n * x[2])
}

/// Classical RK4 on the six STM columns.
fn rk4_stm(dt: f64, n: f64, steps: usize) -> Matrix6<f64> {
    let h = dt / steps as f64;
    let mut phi = Matrix6::identity();
    for j in 0..6 {
        let mut x = phi.column(j).into_owned();
        for _ in 0..steps {
            let k1 = cw_rhs(&x, n);
            let k2 = cw_rhs(&(x + k1 * (h / 2.0)), n);
            let k3 = cw_rhs(&(x + k2 * (h / 2.0)), n);
            let k4 = cw_rhs(&(x + k3 * h), n);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        phi.set_column(j, &x);
    }
    phi
}

/// Nondimensional form `D⁻¹ Φ D` with velocities scaled by `n`.
fn scaled6(m: &Matrix6<f64>, n: f64) -> Matrix6<f64> {
    let d = Matrix6::from_diagonal(&Vector6::new(1.0, 1.0, 1.0, n, n, n));
    d.try_inverse().unwrap() * m * d
}

fn scaled4(m: &Matrix4<f64>, n: f64) -> Matrix4<f64> {
    let d = Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, n, n));
    d.try_inverse().unwrap() * m * d
}

fn max_abs6(m: &Matrix6<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

#[test]
fn coelliptic_rates_match_the_maneuver_table() {
    let ctx = common::leo();
    assert!((ctx.n - 1.1415e-3).abs() < 5e-8);
    assert!((1.5 * ctx.n * 4000.0 - 6.849).abs() < 1e-3);
    assert!((1.5 * ctx.n * 1400.0 - 2.397).abs() < 1e-3);
    assert_eq!(mean_motion(1.0, 1.0).unwrap(), 1.0);
    assert!(mean_motion(0.0, 1.0).is_err());
    assert!(mean_motion(1.0, -1.0).is_err());
}

#[test]
fn stm_matches_integration_over_one_period() {
    let ctx = common::leo();
    let period = ctx.period();
    for (dt, steps) in [(60.0, 120), (period / 3.0, 4000), (period, 12000)] {
        let oracle = scaled6(&rk4_stm(dt, ctx.n, steps), ctx.n);
        let phi = scaled6(&stm_full(dt, &ctx), ctx.n);
        let err = max_abs6(&(phi - oracle)) / max_abs6(&oracle);
        assert!(err < 1e-9, "dt = {dt}: relative error {err:e}");
    }
}

#[test]
fn planar_block_is_embedded_in_the_full_stm() {
    let ctx = common::leo();
    let full = stm_full(1234.5, &ctx);
    let planar = stm_planar(1234.5, &ctx);
    for (i, &fi) in PLANAR_IN_FULL.iter().enumerate() {
        for (j, &fj) in PLANAR_IN_FULL.iter().enumerate() {
            assert_eq!(full[(fi, fj)], planar[(i, j)]);
        }
    }
}

#[test]
fn derivative_matches_finite_differences() {
    let ctx = common::leo();
    let a = plant_planar(&ctx);
    let h = 1e-4;
    for dt in [0.0, 100.0, std::f64::consts::FRAC_PI_2 / ctx.n, 3000.0, -700.0] {
        let fd = (stm_planar(dt + h, &ctx) - stm_planar(dt - h, &ctx)) / (2.0 * h);
        let d = stm_dt_derivative(dt, &ctx);
        let scale = scaled4(&d, ctx.n).abs().max();
        assert!(scaled4(&(d - fd), ctx.n).abs().max() < 1e-6 * scale, "dt = {dt}");
        let exact = a * stm_planar(dt, &ctx);
        assert!(scaled4(&(d - exact), ctx.n).abs().max() < 1e-12 * scale);
        let full = stm_dt_derivative_full(dt, &ctx) - plant_full(&ctx) * stm_full(dt, &ctx);
        assert!(scaled6(&full, ctx.n).abs().max() < 1e-12 * scale);
    }
    let quarter = stm_dt_derivative(std::f64::consts::FRAC_PI_2 / ctx.n, &ctx);
    assert!((quarter[(0, 0)] - 3.0 * ctx.n).abs() < 1e-15);
}

#[test]
fn hold_points_and_coelliptic_drift() {
    let ctx = common::leo();
    let hold = Vector4::new(0.0, 750.0, 0.0, 0.0);
    for dt in [1800.0, 5000.0, -300.0] {
        let x = propagate_planar(&hold, dt, &ctx, None);
        assert!((x - hold).norm() < 1e-9);
    }
    let co = Vector4::new(-4000.0, -17500.0, 0.0, 1.5 * ctx.n * 4000.0);
    for dt in [60.0, 2100.0, 86_400.0] {
        let x = propagate_planar(&co, dt, &ctx, None);
        assert!((x[0] + 4000.0).abs() < 1e-6 && x[2].abs() < 1e-9);
        assert!((x[1] - (co[1] + co[3] * dt)).abs() < 1e-6 * dt.max(1.0));
    }
}

#[test]
fn first_transfer_arrives_at_nsr() {
    let ctx = common::leo();
    let wps = common::waypoints();
    let ct = State3::from_iterator(wps[0].position.iter().chain(wps[0].velocity.unwrap().iter()).copied());
    let hold = propagate_full(&ct, 30.0, &ctx, None);
    let br1 = Vector3::from(common::BURN_TABLE[0].0);
    let x = propagate_full(&propagate_full(&hold, 0.0, &ctx, Some(&br1)), 35.0 * 60.0, &ctx, None);
    let nsr = wps[1].position;
    assert!((x.fixed_rows::<3>(0) - nsr).norm() < 5.0, "arrived at {:?}", x.fixed_rows::<3>(0));
}

#[test]
fn slice_interface_checks_shapes() {
    let ctx = common::leo();
    let out = propagate(&[0.0, 750.0, 0.0, 0.0], 0.0, &ctx, Some(&[0.1, -0.2])).unwrap();
    assert_eq!(out, vec![0.0, 750.0, 0.1, -0.2]);
    assert!(propagate(&[0.0; 6], 1.0, &ctx, Some(&[0.0; 2])).is_err());
    assert!(propagate(&[0.0; 5], 1.0, &ctx, None).is_err());
    assert!(propagate(&[f64::NAN; 4], 1.0, &ctx, None).is_err());
    let s = stm(0.0, &ctx, Mode::Full3d).unwrap();
    assert_eq!(s.dim(), 6);
    assert_eq!(s.to_row_major()[0..7], [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
}

proptest! {
    #[test]
    fn semigroup_and_unit_determinant(t1 in -12_000.0f64..12_000.0, t2 in -12_000.0f64..12_000.0) {
        let ctx = common::leo();
        let lhs = scaled6(&stm_full(t1 + t2, &ctx), ctx.n);
        let rhs = scaled6(&(stm_full(t2, &ctx) * stm_full(t1, &ctx)), ctx.n);
        let scale = max_abs6(&lhs).max(1.0);
        prop_assert!(max_abs6(&(lhs - rhs)) < 1e-9 * scale);
        prop_assert!((stm_full(t1, &ctx).determinant() - 1.0).abs() < 1e-9);
        prop_assert!((stm_planar(t2, &ctx).determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn position_rows_are_the_top_of_the_stm(tau in 0.0f64..86_400.0, x in prop::array::uniform4(-1e4f64..1e4)) {
        let ctx = common::leo();
        let x = Vector4::from(x);
        let r: Vector2<f64> = stm_position_rows(tau, &ctx) * x;
        let full = stm_planar(tau, &ctx) * x;
        prop_assert!((r - full.fixed_rows::<2>(0)).norm() <= 1e-12 * full.norm().max(1.0));
    }

    #[test]
    fn impulse_is_applied_after_the_coast(dt in -5000.0f64..5000.0, dv in prop::array::uniform3(-1.0f64..1.0)) {
        let ctx = common::leo();
        let x = State3::new(100.0, -2000.0, 30.0, 0.1, 0.2, -0.05);
        let dv = Vector3::from(dv);
        let with = propagate_full(&x, dt, &ctx, Some(&dv));
        let without = propagate_full(&x, dt, &ctx, None);
        prop_assert!((with.fixed_rows::<3>(0) - without.fixed_rows::<3>(0)).norm() == 0.0);
        prop_assert!((with.fixed_rows::<3>(3) - without.fixed_rows::<3>(3) - dv).norm() < 1e-15);
    }
}
