//! Linearized two-burn Lambert targeting and waypoint plan construction.

use nalgebra::{Matrix2, Matrix3, Vector3};

use crate::dynamics::{propagate_full, stm_full, OrbitContext, State3};
use crate::uq::{Burn, ManeuverPlan, Waypoint};
use crate::{Error, Result};

/// Threshold on the in-plane `|det Φ_rv|·n²` below which a transfer is singular.
pub const SINGULAR_DET: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambertCorrection {
    /// Velocity change to apply now.
    pub dv1: Vector3<f64>,
    /// Projected arrival burn; never applied.
    pub dv2_projected: Vector3<f64>,
}

/// STM blocks `(Φ_rr, Φ_rv, Φ_vr, Φ_vv)` of the full CW model over `tof`.
pub fn stm_blocks(tof: f64, ctx: &OrbitContext) -> [Matrix3<f64>; 4] {
    let phi = stm_full(tof, ctx);
    [
        phi.fixed_view::<3, 3>(0, 0).into_owned(),
        phi.fixed_view::<3, 3>(0, 3).into_owned(),
        phi.fixed_view::<3, 3>(3, 0).into_owned(),
        phi.fixed_view::<3, 3>(3, 3).into_owned(),
    ]
}

/// `Φ_rv⁻¹` over `tof`, or a singular-transfer error.
///
/// Only the in-plane block can make a transfer singular. The cross-track
/// entry `sin(n·tof)/n` vanishes every half period; there it is
/// pseudo-inverted, leaving cross-track motion untargeted.
pub fn inverse_rv(tof: f64, ctx: &OrbitContext) -> Result<Matrix3<f64>> {
    let [_, rv, _, _] = stm_blocks(tof, ctx);
    let det = rv.determinant();
    let plane = Matrix2::new(rv[(0, 0)], rv[(0, 1)], rv[(1, 0)], rv[(1, 1)]);
    let det2 = plane.determinant();
    if !(det2.abs() * ctx.n.powi(2) >= SINGULAR_DET) {
        return Err(Error::SingularTransfer { det, tof });
    }
    let inv2 = plane.try_inverse().ok_or(Error::SingularTransfer { det, tof })?;
    let cross = rv[(2, 2)] * ctx.n;
    let inv_z = if cross.abs() < CROSS_TRACK_FLOOR { 0.0 } else { 1.0 / rv[(2, 2)] };
    Ok(Matrix3::new(inv2[(0, 0)], inv2[(0, 1)], 0.0, inv2[(1, 0)], inv2[(1, 1)], 0.0, 0.0, 0.0, inv_z))
}

/// `|sin(n·tof)|` below which cross-track targeting is dropped.
pub const CROSS_TRACK_FLOOR: f64 = 1e-6;

/// Feedback gain `Φ_rv⁻¹Φ_rr`: the change in the departure burn per unit of
/// estimated position offset is `−K`.
pub fn correction_gain(tof: f64, ctx: &OrbitContext) -> Result<Matrix3<f64>> {
    let [rr, _, _, _] = stm_blocks(tof, ctx);
    Ok(inverse_rv(tof, ctx)? * rr)
}

/// Retarget the estimated state onto `target_pos` after `tof`.
///
/// `dv1 = Φ_rv⁻¹(r* − Φ_rr r̂) − v̂⁻`, and the projected arrival burn is
/// `v* − (Φ_vr r̂ + Φ_vv v̂⁺)`.
pub fn lambert_correct(
    nav_state: &State3,
    target_pos: &Vector3<f64>,
    target_vel: &Vector3<f64>,
    tof: f64,
    ctx: &OrbitContext,
) -> Result<LambertCorrection> {
    let [rr, _, vr, vv] = stm_blocks(tof, ctx);
    let inv = inverse_rv(tof, ctx)?;
    let r_hat: Vector3<f64> = nav_state.fixed_rows::<3>(0).into_owned();
    let v_hat: Vector3<f64> = nav_state.fixed_rows::<3>(3).into_owned();
    let v_plus = inv * (target_pos - rr * r_hat);
    let dv1 = v_plus - v_hat;
    let dv2_projected = target_vel - (vr * r_hat + vv * v_plus);
    Ok(LambertCorrection { dv1, dv2_projected })
}

/// Reconstruct an impulsive plan from a waypoint table.
///
/// Transfer times run from arrival at the previous waypoint (its hold
/// included) to arrival at this one. When a waypoint holds for zero time the
/// arrival and departure burns merge into one.
pub fn two_impulse_plan(waypoints: &[Waypoint], ctx: &OrbitContext) -> Result<ManeuverPlan> {
    if waypoints.len() < 2 {
        return Err(Error::Domain("a plan needs at least two waypoints".into()));
    }
    let first = &waypoints[0];
    let v0 = first.velocity.ok_or_else(|| Error::Domain(format!("initial waypoint {} needs a velocity", first.label)))?;
    let initial_state = state_of(&first.position, &v0);

    let mut burns = Vec::new();
    let mut state = initial_state;
    let mut t = 0.0;
    let mut arrival = 0.0;

    for j in 0..waypoints.len() {
        let wp = &waypoints[j];
        let hold = wp.hold_time.unwrap_or(0.0);
        let last = j + 1 == waypoints.len();

        if last {
            if let Some(v) = wp.velocity {
                let dv = v - state.fixed_rows::<3>(3);
                burns.push(Burn::new(t, dv, format!("arrive {}", wp.label), Some(wp.label.clone())));
            }
            break;
        }

        let next = &waypoints[j + 1];
        let transfer =
            next.transfer_time.ok_or_else(|| Error::Domain(format!("waypoint {} needs a transfer time", next.label)))?;
        if hold > 0.0 && j > 0 {
            if let Some(v) = wp.velocity {
                let dv = v - state.fixed_rows::<3>(3);
                burns.push(Burn::new(t, dv, format!("arrive {}", wp.label), Some(wp.label.clone())));
                state = propagate_full(&state, 0.0, ctx, Some(&dv));
            }
        }
        if hold > 0.0 {
            state = propagate_full(&state, hold, ctx, None);
            t += hold;
        }
        let tof = arrival + transfer - t;
        if !(tof > 0.0) {
            return Err(Error::Domain(format!("transfer to {} is shorter than the hold at {}", next.label, wp.label)));
        }
        let target_vel = next.velocity.unwrap_or_else(Vector3::zeros);
        let corr = lambert_correct(&state, &next.position, &target_vel, tof, ctx)?;
        let label = if j == 0 { format!("leave {}", wp.label) } else { wp.label.clone() };
        burns.push(Burn::new(t, corr.dv1, label, Some(next.label.clone())));
        state = propagate_full(&state, tof, ctx, None) + impulse_response(&corr.dv1, tof, ctx);
        t += tof;
        arrival = t;
    }

    let plan = ManeuverPlan { initial_state, burns, waypoints: waypoints.to_vec() };
    plan.validate()?;
    Ok(plan)
}

fn impulse_response(dv: &Vector3<f64>, dt: f64, ctx: &OrbitContext) -> State3 {
    stm_full(dt, ctx) * state_of(&Vector3::zeros(), dv)
}

pub(crate) fn state_of(r: &Vector3<f64>, v: &Vector3<f64>) -> State3 {
    State3::new(r[0], r[1], r[2], v[0], v[1], v[2])
}
