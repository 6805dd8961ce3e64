//! Passively safe trajectory optimization by successive convexification.
//!
//! Each subproblem is a second-order cone program over planar post-burn node
//! states, impulses, impulse-norm slacks and segment durations. Keep-out and
//! free-drift constraints are linearized about the previous iterate and
//! inflated by dispersion buffers computed from the closed-loop covariance of
//! that iterate.

mod solver;
mod subproblem;

use nalgebra::{Matrix2, Matrix6, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{full_of, propagate_planar, stm_full, stm_planar, stm_position_rows, OrbitContext, PlanarState};
use crate::linalg::max_eigenvalue2;
use crate::uq::{Burn, ManeuverPlan};
use crate::{Error, Result};

pub use solver::{grid_search_burn_count, solve_scp, GridSearch, IterationRecord, ScpResult};
pub use subproblem::{build_subproblem, Layout, Stage};

/// Multiplier `c` whose 2-DOF chi-squared ellipse holds probability `beta`.
pub fn chi2_radius(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0, 1), got {beta}")));
    }
    Ok((-2.0 * (-beta).ln_1p()).sqrt())
}

/// Radius of the circle circumscribing the `c`-ellipse of a 2×2 covariance.
pub fn buffer_radius(sigma2: &Matrix2<f64>, c: f64) -> f64 {
    c * max_eigenvalue2(sigma2).sqrt()
}

/// Straight-line reference positions and the uniform interval `tf0 / k_f`.
pub fn initial_reference(r_i: &Vector2<f64>, r_f: &Vector2<f64>, tf0: f64, n_nodes: usize) -> Result<(Vec<Vector2<f64>>, f64)> {
    if n_nodes < 2 {
        return Err(Error::Domain(format!("need at least two nodes, got {n_nodes}")));
    }
    if !(tf0.is_finite() && tf0 > 0.0) {
        return Err(Error::Domain(format!("time of flight guess must be positive, got {tf0}")));
    }
    let kf = (n_nodes - 1) as f64;
    let pts = (0..n_nodes).map(|k| r_i + (r_f - r_i) * (k as f64 / kf)).collect();
    Ok((pts, tf0 / kf))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    /// State before the first burn.
    pub x_i: PlanarState,
    /// State after the last burn.
    pub x_f: PlanarState,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChanceConfig {
    pub r_kos: f64,
    pub beta: f64,
    pub t_safe: f64,
    /// Drift grid step inside subproblems, s.
    pub gamma: f64,
    /// Drift grid step of the final safety check, s.
    pub gamma_verify: f64,
    /// When false, buffers are zero whatever the dispersions.
    pub buffers: bool,
}

impl Default for ChanceConfig {
    fn default() -> Self {
        Self { r_kos: 150.0, beta: 0.99, t_safe: 86_400.0, gamma: 600.0, gamma_verify: 60.0, buffers: true }
    }
}

impl ChanceConfig {
    pub fn c(&self) -> Result<f64> {
        chi2_radius(self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        self.c()?;
        if !(self.r_kos.is_finite() && self.r_kos >= 0.0) {
            return Err(Error::Domain("keep-out radius must be non-negative".into()));
        }
        crate::uq::drift_grid(self.t_safe, self.gamma)?;
        crate::uq::drift_grid(self.t_safe, self.gamma_verify)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MinFuel,
    MinTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScpConfig {
    pub objective: Objective,
    /// Time-of-flight guess, s.
    pub tf0: f64,
    /// Trust-region fraction on segment durations.
    pub phi: f64,
    pub max_iters: usize,
    /// Convergence threshold on the largest relative duration change.
    pub tol_dt: f64,
    /// Convergence threshold on the relative objective change.
    pub tol_obj: f64,
    pub tf_max: Option<f64>,
    /// Hold the time of flight at `tf_max` instead of bounding it.
    pub tf_fixed: bool,
    pub dv_max: Option<f64>,
    /// Prescribed node positions, m.
    pub waypoints: Vec<(usize, Vector2<f64>)>,
    /// Extra clearance on linearized keep-out constraints, m.
    pub margin: f64,
    /// Dispersion null-burn threshold for buffer evaluation, m/s. Zero
    /// applies a correction at every node.
    pub null_burn: f64,
    /// Objective weight per nondimensional unit of keep-out slack.
    pub slack_penalty: f64,
    /// Initial merit weight per nondimensional unit of constraint violation.
    pub penalty: f64,
}

impl Default for ScpConfig {
    fn default() -> Self {
        Self {
            objective: Objective::MinFuel,
            tf0: 7200.0,
            phi: 0.1,
            max_iters: 30,
            tol_dt: 1e-3,
            tol_obj: 1e-4,
            tf_max: None,
            tf_fixed: false,
            dv_max: None,
            waypoints: Vec::new(),
            margin: 0.05,
            null_burn: 0.0,
            slack_penalty: 1e6,
            penalty: 1e3,
        }
    }
}

impl ScpConfig {
    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(Error::Domain(format!("trust region fraction must lie in (0, 1), got {}", self.phi)));
        }
        if self.max_iters < 2 {
            return Err(Error::Domain("at least two convexification iterations are required".into()));
        }
        if !(self.tf0 > 0.0) {
            return Err(Error::Domain("time of flight guess must be positive".into()));
        }
        if let Some(tf) = self.tf_max {
            if !(tf > 0.0) {
                return Err(Error::Domain("maximum time of flight must be positive".into()));
            }
            if self.tf0 > tf * (1.0 + 1e-12) {
                return Err(Error::Domain("time of flight guess exceeds the maximum".into()));
            }
        } else if self.tf_fixed {
            return Err(Error::Domain("a fixed time of flight needs tf_max".into()));
        }
        if self.objective == Objective::MinTime && self.tf_fixed {
            return Err(Error::Domain("minimum time with a fixed time of flight".into()));
        }
        for (k, _) in &self.waypoints {
            if *k == 0 || *k + 1 >= n_nodes {
                return Err(Error::Domain(format!("waypoint node {k} must be interior for {n_nodes} nodes")));
            }
        }
        Ok(())
    }
}

/// Post-burn planar node states, impulses and segment durations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NominalTrajectory {
    /// Duration of segment `k → k+1`, s.
    pub dt: Vec<f64>,
    pub x: Vec<PlanarState>,
    pub u: Vec<Vector2<f64>>,
}

impl NominalTrajectory {
    pub fn n_nodes(&self) -> usize {
        self.x.len()
    }

    /// Node times from the first burn.
    pub fn times(&self) -> Vec<f64> {
        let mut t = vec![0.0];
        for dt in &self.dt {
            t.push(t.last().unwrap() + dt);
        }
        t
    }

    pub fn tf(&self) -> f64 {
        self.dt.iter().sum()
    }

    pub fn total_dv(&self) -> f64 {
        self.u.iter().map(|u| u.norm()).sum()
    }

    pub fn objective(&self, objective: Objective) -> f64 {
        match objective {
            Objective::MinFuel => self.total_dv(),
            Objective::MinTime => self.tf(),
        }
    }

    /// Trajectory through `positions` with exact coasts of `dt`, burns
    /// chosen so every segment lands on the next position.
    pub fn through(boundary: &Boundary, positions: &[Vector2<f64>], dt: &[f64], ctx: &OrbitContext) -> Result<Self> {
        let n = positions.len();
        if n < 2 || dt.len() + 1 != n {
            return Err(Error::Dimension(format!("{n} positions with {} intervals", dt.len())));
        }
        let mut x = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        let mut v_arrive = Vector2::new(boundary.x_i[2], boundary.x_i[3]);
        for k in 0..n - 1 {
            let phi = stm_planar(dt[k], ctx);
            let rr = phi.fixed_view::<2, 2>(0, 0);
            let rv = phi.fixed_view::<2, 2>(0, 2).into_owned();
            let det = rv.determinant();
            if !(det.abs() * ctx.n * ctx.n >= crate::uq::SINGULAR_DET) {
                return Err(Error::SingularTransfer { det, tof: dt[k] });
            }
            let inv = rv.try_inverse().ok_or(Error::SingularTransfer { det, tof: dt[k] })?;
            let v_plus = inv * (positions[k + 1] - rr * positions[k]);
            u.push(v_plus - v_arrive);
            x.push(PlanarState::new(positions[k][0], positions[k][1], v_plus[0], v_plus[1]));
            v_arrive = phi.fixed_view::<2, 2>(2, 0) * positions[k] + phi.fixed_view::<2, 2>(2, 2) * v_plus;
        }
        u.push(Vector2::new(boundary.x_f[2], boundary.x_f[3]) - v_arrive);
        let last = positions[n - 1];
        x.push(PlanarState::new(last[0], last[1], boundary.x_f[2], boundary.x_f[3]));
        Ok(Self { dt: dt.to_vec(), x, u })
    }

    /// Largest position mismatch (m) and velocity mismatch (m/s) between the
    /// stored nodes and an exact re-propagation of the burns.
    pub fn residuals(&self, boundary: &Boundary, ctx: &OrbitContext) -> (f64, f64) {
        let mut state = propagate_planar(&boundary.x_i, 0.0, ctx, Some(&self.u[0]));
        let (mut dr, mut dv) = (0.0f64, 0.0f64);
        for k in 0..self.x.len() {
            if k > 0 {
                state = propagate_planar(&state, self.dt[k - 1], ctx, Some(&self.u[k]));
            }
            let e = state - self.x[k];
            dr = dr.max(e.fixed_rows::<2>(0).norm());
            dv = dv.max(e.fixed_rows::<2>(2).norm());
        }
        let e = state - boundary.x_f;
        (dr.max(e.fixed_rows::<2>(0).norm()), dv.max(e.fixed_rows::<2>(2).norm()))
    }

    /// Three-dimensional plan with zero cross-track motion.
    pub fn to_plan(&self, boundary: &Boundary) -> ManeuverPlan {
        let burns = self
            .times()
            .into_iter()
            .zip(&self.u)
            .enumerate()
            .map(|(k, (t, u))| Burn::new(t, nalgebra::Vector3::new(u[0], u[1], 0.0), format!("node {k}"), None))
            .collect();
        ManeuverPlan { initial_state: full_of(&boundary.x_i), burns, waypoints: Vec::new() }
    }
}

/// Buffer radii `r_b[k][j]` for node `k` drifting `taus[k][j]` seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BufferField {
    pub taus: Vec<Vec<f64>>,
    pub r_b: Vec<Vec<f64>>,
    /// Full post-burn covariance per node. Buffers use its 3×3 position
    /// block, so cross-track spread counts against the keep-out sphere too.
    pub covariances: Vec<Matrix6<f64>>,
}

impl BufferField {
    /// Buffers for given node covariances on per-node drift grids.
    pub fn from_covariances(covariances: Vec<Matrix6<f64>>, taus: Vec<Vec<f64>>, c: f64, ctx: &OrbitContext) -> Self {
        let r_b = covariances
            .iter()
            .zip(&taus)
            .map(|(p, ts)| {
                ts.iter()
                    .map(|&tau| {
                        let phi_r = stm_full(tau, ctx).fixed_rows::<3>(0).into_owned();
                        let pos = phi_r * p * phi_r.transpose();
                        c * ((pos + pos.transpose()) * 0.5).symmetric_eigenvalues().max().max(0.0).sqrt()
                    })
                    .collect()
            })
            .collect();
        Self { taus, r_b, covariances }
    }
}

/// Largest nonlinear keep-out violation (m) over nodes `0..k_f`.
pub fn max_violation(traj: &NominalTrajectory, buffers: &BufferField, r_kos: f64, ctx: &OrbitContext) -> f64 {
    let kf = traj.n_nodes() - 1;
    let mut worst = 0.0f64;
    for k in 0..kf {
        for (&tau, rb) in buffers.taus[k].iter().zip(&buffers.r_b[k]) {
            let d = (stm_position_rows(tau, ctx) * traj.x[k]).norm();
            worst = worst.max(r_kos + rb - d);
        }
    }
    worst
}
