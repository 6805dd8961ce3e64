//! Second-order cone subproblem about a reference trajectory.

use nalgebra::{Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::conic::ConicProblem;
use crate::dynamics::{stm_dt_derivative, stm_planar, stm_position_rows, OrbitContext};
use crate::scp::{Boundary, BufferField, ChanceConfig, NominalTrajectory, Objective, ScpConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Fixed uniform intervals, fuel objective.
    Init,
    /// Intervals free within the trust region.
    Scvx,
}

/// Variable positions and nondimensional scales of a built subproblem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layout {
    pub n_nodes: usize,
    pub x: usize,
    pub u: usize,
    pub s: usize,
    pub dt: usize,
    /// One keep-out slack per constrained node, when relaxed.
    pub slack: Option<usize>,
    /// Length scale, m.
    pub length: f64,
    /// Time scale, s.
    pub time: f64,
}

impl Layout {
    fn new(n_nodes: usize, with_slack: bool, length: f64, time: f64) -> Self {
        let x = 0;
        let u = x + 4 * n_nodes;
        let s = u + 2 * n_nodes;
        let dt = s + n_nodes;
        let end = dt + n_nodes - 1;
        Self { n_nodes, x, u, s, dt, slack: with_slack.then_some(end), length, time }
    }

    pub fn n_vars(&self) -> usize {
        self.dt + self.n_nodes - 1 + if self.slack.is_some() { self.n_nodes - 1 } else { 0 }
    }

    fn velocity(&self) -> f64 {
        self.length / self.time
    }

    fn state_scale(&self) -> Matrix4<f64> {
        let v = self.velocity();
        Matrix4::from_diagonal(&Vector4::new(self.length, self.length, v, v))
    }

    /// Node positions (m), segment durations (s), impulses (m/s) and the
    /// largest keep-out slack (m) of a solution vector.
    pub fn unpack(&self, sol: &[f64]) -> (Vec<Vector2<f64>>, Vec<f64>, Vec<Vector2<f64>>, f64) {
        let pos = (0..self.n_nodes).map(|k| Vector2::new(sol[self.x + 4 * k], sol[self.x + 4 * k + 1]) * self.length).collect();
        let dt = (0..self.n_nodes - 1).map(|k| sol[self.dt + k] * self.time).collect();
        let u = (0..self.n_nodes).map(|k| Vector2::new(sol[self.u + 2 * k], sol[self.u + 2 * k + 1]) * self.velocity()).collect();
        let slack = self.slack.map_or(0.0, |s0| (0..self.n_nodes - 1).map(|k| sol[s0 + k]).fold(0.0, f64::max) * self.length);
        (pos, dt, u, slack)
    }
}

/// Relative tightening of the ΔV cap inside the convex model.
const CAP_BACKOFF: f64 = 1e-4;

/// Length used to nondimensionalize a subproblem, m.
pub(crate) fn length_scale(boundary: &Boundary, chance: &ChanceConfig) -> f64 {
    [boundary.x_i, boundary.x_f].iter().map(|x| x.fixed_rows::<2>(0).norm()).fold(chance.r_kos.max(1.0), f64::max)
}

/// Build the convex subproblem linearized about `reference`.
///
/// Keep-out constraints cover nodes `0..k_f` on each node's drift grid in
/// `buffers`; the terminal node is a hold and is not constrained.
#[allow(clippy::too_many_arguments)]
pub fn build_subproblem(
    boundary: &Boundary,
    reference: &NominalTrajectory,
    buffers: &BufferField,
    cfg: &ScpConfig,
    chance: &ChanceConfig,
    stage: Stage,
    phi: f64,
    with_slack: bool,
    ctx: &OrbitContext,
) -> Result<(ConicProblem, Layout)> {
    let n = reference.n_nodes();
    if n < 2 || buffers.taus.len() < n - 1 || buffers.r_b.len() < n - 1 {
        return Err(Error::Dimension(format!("reference with {n} nodes against {} buffer rows", buffers.taus.len())));
    }
    let length = length_scale(boundary, chance);
    let lay = Layout::new(n, with_slack, length, 1.0 / ctx.n);
    let d = lay.state_scale();
    let d_inv = d.try_inverse().expect("positive scales");
    let mut p = ConicProblem::new(lay.n_vars());
    let xi = |k: usize, i: usize| lay.x + 4 * k + i;
    let ui = |k: usize, i: usize| lay.u + 2 * k + i;

    // X[0] = x_i + B u[0]
    let x_i = d_inv * boundary.x_i;
    for i in 0..4 {
        let mut row = vec![(xi(0, i), 1.0)];
        if i >= 2 {
            row.push((ui(0, i - 2), -1.0));
        }
        p.add_eq(&row, x_i[i]);
    }
    // X[k_f] = x_f
    let x_f = d_inv * boundary.x_f;
    for i in 0..4 {
        p.add_eq(&[(xi(n - 1, i), 1.0)], x_f[i]);
    }

    for k in 0..n - 1 {
        let dt0 = reference.dt[k];
        let phi_s = d_inv * stm_planar(dt0, ctx) * d;
        let g = d_inv * stm_dt_derivative(dt0, ctx) * reference.x[k] * lay.time;
        let dt0_s = dt0 / lay.time;
        for i in 0..4 {
            let mut row = vec![(xi(k + 1, i), 1.0)];
            for j in 0..4 {
                row.push((xi(k, j), -phi_s[(i, j)]));
            }
            row.push((lay.dt + k, -g[i]));
            if i >= 2 {
                row.push((ui(k + 1, i - 2), -1.0));
            }
            p.add_eq(&row, -g[i] * dt0_s);
        }
        if stage == Stage::Init {
            p.add_eq(&[(lay.dt + k, 1.0)], dt0_s);
        } else {
            p.set_bounds(lay.dt + k, Some((1.0 - phi) * dt0_s), Some((1.0 + phi) * dt0_s));
        }
    }

    for k in 0..n {
        p.add_cone(vec![lay.s + k, ui(k, 0), ui(k, 1)]);
    }

    for (k, r) in &cfg.waypoints {
        p.add_eq(&[(xi(*k, 0), 1.0)], r[0] / length);
        p.add_eq(&[(xi(*k, 1), 1.0)], r[1] / length);
    }

    let dt_all: Vec<(usize, f64)> = (0..n - 1).map(|k| (lay.dt + k, 1.0)).collect();
    if let Some(tf) = cfg.tf_max {
        if cfg.tf_fixed {
            p.add_eq(&dt_all, tf / lay.time);
        } else {
            p.add_le(&dt_all, tf / lay.time);
        }
    }
    if let Some(dv) = cfg.dv_max {
        let s_all: Vec<(usize, f64)> = (0..n).map(|k| (lay.s + k, 1.0)).collect();
        // The exact re-propagation moves ΔV by second-order terms; keep the
        // model just inside the cap.
        p.add_le(&s_all, dv * (1.0 - CAP_BACKOFF) / lay.velocity());
    }

    for k in 0..n - 1 {
        for (&tau, &rb) in buffers.taus[k].iter().zip(&buffers.r_b[k]) {
            let phi_r = stm_position_rows(tau, ctx);
            let r0 = phi_r * reference.x[k];
            let norm = r0.norm();
            if !(norm > 1e-9 * length) {
                return Err(Error::DegenerateLinearization { node: k, tau });
            }
            let a = (r0 / norm).transpose() * phi_r * d / length;
            let mut row: Vec<(usize, f64)> = (0..4).map(|j| (xi(k, j), a[j])).collect();
            if let Some(s0) = lay.slack {
                row.push((s0 + k, 1.0));
            }
            p.add_ge(&row, (chance.r_kos + rb + cfg.margin) / length);
        }
    }

    let objective = if stage == Stage::Init { Objective::MinFuel } else { cfg.objective };
    match objective {
        Objective::MinFuel => (0..n).for_each(|k| p.objective[lay.s + k] = 1.0),
        Objective::MinTime => (0..n - 1).for_each(|k| p.objective[lay.dt + k] = 1.0),
    }
    if let Some(s0) = lay.slack {
        for k in 0..n - 1 {
            p.set_bounds(s0 + k, Some(0.0), None);
            p.objective[s0 + k] = cfg.slack_penalty;
        }
    }
    Ok((p, lay))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::MU_EARTH;
    use crate::scp::initial_reference;
    use nalgebra::{Matrix6, Vector6};

    fn setup() -> (OrbitContext, Boundary, NominalTrajectory, BufferField, ChanceConfig) {
        let ctx = OrbitContext::from_semimajor_axis(6_738e3, MU_EARTH).unwrap();
        let boundary =
            Boundary { x_i: Vector4::new(-1400.0, -7500.0, 0.0, 1.5 * ctx.n * 1400.0), x_f: Vector4::new(0.0, 750.0, 0.0, 0.0) };
        let (pos, dxi) = initial_reference(
            &boundary.x_i.fixed_rows::<2>(0).into_owned(),
            &boundary.x_f.fixed_rows::<2>(0).into_owned(),
            3600.0,
            4,
        )
        .unwrap();
        let traj = NominalTrajectory::through(&boundary, &pos, &[dxi; 3], &ctx).unwrap();
        let chance = ChanceConfig { r_kos: 150.0, ..Default::default() };
        let p = Matrix6::from_diagonal(&Vector6::new(100.0, 400.0, 25.0, 1e-4, 1e-4, 1e-4));
        let taus = vec![vec![0.0, 600.0, 1200.0]; 4];
        let buffers = BufferField::from_covariances(vec![p; 4], taus, 3.0, &ctx);
        (ctx, boundary, traj, buffers, chance)
    }

    #[test]
    fn keep_out_rows_reduce_to_the_norm_at_the_reference() {
        let (ctx, boundary, traj, buffers, chance) = setup();
        let cfg = ScpConfig { margin: 0.0, ..Default::default() };
        let (p, lay) = build_subproblem(&boundary, &traj, &buffers, &cfg, &chance, Stage::Scvx, 0.1, false, &ctx).unwrap();
        let d_inv = lay.state_scale().try_inverse().unwrap();
        let mut x = vec![0.0; lay.n_vars()];
        for (k, xk) in traj.x.iter().enumerate() {
            let s = d_inv * xk;
            x[lay.x + 4 * k..lay.x + 4 * k + 4].copy_from_slice(s.as_slice());
        }
        let mut row_value = vec![0.0; p.inequalities.len()];
        for &(r, c, v) in &p.inequalities.triplets {
            row_value[r] += v * x[c];
        }
        let mut row = 0;
        for k in 0..3 {
            for (i, &tau) in buffers.taus[k].iter().enumerate() {
                let norm = (stm_position_rows(tau, &ctx) * traj.x[k]).norm();
                assert!((-row_value[row] * lay.length - norm).abs() < 1e-9 * norm);
                let rhs = -p.inequalities.rhs[row] * lay.length;
                assert!((rhs - chance.r_kos - buffers.r_b[k][i]).abs() < 1e-9);
                row += 1;
            }
        }
        assert_eq!(row, p.inequalities.len());
    }

    #[test]
    fn trust_region_bounds_the_intervals() {
        let (ctx, boundary, traj, buffers, chance) = setup();
        let cfg = ScpConfig::default();
        let (p, lay) = build_subproblem(&boundary, &traj, &buffers, &cfg, &chance, Stage::Scvx, 0.1, false, &ctx).unwrap();
        for k in 0..3 {
            let (lo, hi) = p.bounds[lay.dt + k];
            let dt = traj.dt[k] / lay.time;
            assert!((lo.unwrap() - 0.9 * dt).abs() < 1e-12 && (hi.unwrap() - 1.1 * dt).abs() < 1e-12);
        }
        let (p, lay) = build_subproblem(&boundary, &traj, &buffers, &cfg, &chance, Stage::Init, 0.1, false, &ctx).unwrap();
        assert_eq!(p.bounds[lay.dt], (None, None));
        assert!(p.objective[lay.s..lay.s + 4].iter().all(|&c| c == 1.0));
    }

    #[test]
    fn reference_through_the_origin_is_degenerate() {
        let (ctx, boundary, mut traj, buffers, chance) = setup();
        traj.x[1] = Vector4::zeros();
        let err = build_subproblem(&boundary, &traj, &buffers, &ScpConfig::default(), &chance, Stage::Scvx, 0.1, false, &ctx);
        assert!(matches!(err, Err(Error::DegenerateLinearization { node: 1, tau } ) if tau == 0.0));
    }
}
