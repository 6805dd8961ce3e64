//! Successive convexification loop and burn-count grid search.

use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::Matrix6;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{self, ConicStatus, SolveOptions};
use crate::dynamics::{full_of, OrbitContext};
use crate::scp::subproblem::length_scale;
use crate::scp::{
    build_subproblem, initial_reference, max_violation, Boundary, BufferField, ChanceConfig, NominalTrajectory, Objective,
    ScpConfig, Stage,
};
use crate::uq::{
    closed_loop_dispersion, drift_grid, free_drift_envelope_full, verify_drift_safety, DispersionConfig, SafetyReport, UqOptions,
};
use crate::{Error, Result};

/// Nondimensional keep-out violation tolerated when judging feasibility.
const FEASIBLE_TOL: f64 = 1e-6;
/// Ratio of actual to predicted merit reduction below which a step is rejected.
const RHO_REJECT: f64 = 0.0;
/// Accepted steps below this ratio shrink the trust region.
const RHO_SHRINK: f64 = 0.25;
/// Accepted steps above this ratio grow it back toward the configured size.
const RHO_GROW: f64 = 0.7;
/// Smallest trust region, as a fraction of the configured one.
const MIN_PHI: f64 = 1e-4;
const MAX_PENALTY: f64 = 1e9;

/// One line of iteration diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub stage: Stage,
    pub objective: f64,
    pub total_dv: f64,
    pub tf: f64,
    pub max_dt_change: f64,
    /// Largest keep-out violation of the candidate with its own buffers, m.
    pub max_violation: f64,
    pub phi: f64,
    pub accepted: bool,
    /// Reference was infeasible, so the step only had to reduce violation.
    pub restoration: bool,
    pub slack: f64,
    pub constraints: usize,
    pub solve_s: f64,
    pub dt_reference: Vec<f64>,
    pub dt: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScpResult {
    pub trajectory: NominalTrajectory,
    pub boundary: Boundary,
    pub history: Vec<IterationRecord>,
    pub buffers: BufferField,
    /// Check on the dense drift grid with the final buffers.
    pub safety: SafetyReport,
    pub converged: bool,
    pub elapsed_s: f64,
}

/// Post-burn covariances of every node of `traj`.
fn node_covariances(
    traj: &NominalTrajectory,
    boundary: &Boundary,
    dispersion: &DispersionConfig,
    null_burn: f64,
    ctx: &OrbitContext,
) -> Result<Vec<Matrix6<f64>>> {
    let plan = traj.to_plan(boundary);
    let mut cfg = dispersion.clone();
    cfg.null_burn = null_burn;
    let opts = UqOptions { history_step: 0.0, ..Default::default() };
    let result = closed_loop_dispersion(&plan, &cfg, ctx, &opts)?;
    (0..traj.n_nodes())
        .map(|k| result.post_burn(k).copied().ok_or_else(|| Error::Numerical(format!("missing covariance at node {k}"))))
        .collect()
}

struct Context<'a> {
    boundary: &'a Boundary,
    cfg: &'a ScpConfig,
    chance: &'a ChanceConfig,
    dispersion: &'a DispersionConfig,
    ctx: &'a OrbitContext,
    c: f64,
    length: f64,
}

impl Context<'_> {
    fn buffers(&self, traj: &NominalTrajectory, taus: &[Vec<f64>], active: bool) -> Result<BufferField> {
        let covs = if active && self.chance.buffers {
            node_covariances(traj, self.boundary, self.dispersion, self.cfg.null_burn, self.ctx)?
        } else {
            vec![Matrix6::zeros(); traj.n_nodes()]
        };
        Ok(BufferField::from_covariances(covs, taus.to_vec(), self.c, self.ctx))
    }

    /// Solve one subproblem, retrying with keep-out slack when infeasible.
    fn solve(&self, reference: &NominalTrajectory, buffers: &BufferField, stage: Stage, phi: f64) -> Result<Candidate> {
        let opts = SolveOptions::default();
        for with_slack in [false, true] {
            let (problem, layout) =
                build_subproblem(self.boundary, reference, buffers, self.cfg, self.chance, stage, phi, with_slack, self.ctx)?;
            let sol = conic::solve(&problem, &opts)?;
            match sol.status {
                ConicStatus::Optimal => {
                    let (pos, dt, u, slack) = layout.unpack(&sol.x);
                    let predicted = match self.cfg.objective {
                        Objective::MinFuel => u.iter().map(|u| u.norm()).sum(),
                        Objective::MinTime => dt.iter().sum(),
                    };
                    let scales = Scales {
                        length: layout.length,
                        objective: match self.cfg.objective {
                            Objective::MinFuel => layout.length / layout.time,
                            Objective::MinTime => layout.time,
                        },
                        velocity: layout.length / layout.time,
                        time: layout.time,
                    };
                    let traj = NominalTrajectory::through(self.boundary, &pos, &dt, self.ctx)?;
                    return Ok(Candidate { traj, slack, constraints: problem.inequalities.len(), predicted, scales });
                }
                ConicStatus::Infeasible if !with_slack => {
                    debug!("subproblem infeasible, retrying with keep-out slack");
                }
                ConicStatus::Infeasible => {
                    return Err(Error::Infeasible("subproblem infeasible even with keep-out slack".into()))
                }
                other => return Err(Error::Numerical(format!("subproblem ended with {other:?}: {}", sol.detail))),
            }
        }
        unreachable!("second attempt always returns")
    }

    /// Excess over the ΔV and time-of-flight caps, nondimensional.
    fn cap_excess(&self, traj: &NominalTrajectory, scales: &Scales) -> f64 {
        let dv = self.cfg.dv_max.map_or(0.0, |m| (traj.total_dv() - m).max(0.0) / scales.velocity);
        let tf = self.cfg.tf_max.map_or(0.0, |m| (traj.tf() - m).max(0.0) / scales.time);
        dv + tf
    }

    fn feasible(&self, traj: &NominalTrajectory, violation: f64) -> bool {
        let dv_ok = self.cfg.dv_max.is_none_or(|m| traj.total_dv() <= m * (1.0 + 1e-6));
        let tf_ok = self.cfg.tf_max.is_none_or(|m| traj.tf() <= m * (1.0 + 1e-9));
        violation <= FEASIBLE_TOL * self.length && dv_ok && tf_ok
    }

    /// Objective plus weighted constraint violation, nondimensional.
    fn merit(&self, traj: &NominalTrajectory, violation: f64, mu: f64, scales: &Scales) -> f64 {
        traj.objective(self.cfg.objective) / scales.objective + mu * (violation / scales.length + self.cap_excess(traj, scales))
    }
}

#[derive(Clone, Copy, Debug)]
struct Scales {
    length: f64,
    objective: f64,
    velocity: f64,
    time: f64,
}

struct Candidate {
    traj: NominalTrajectory,
    /// Largest keep-out slack, m.
    slack: f64,
    constraints: usize,
    /// Objective of the convex model, in physical units.
    predicted: f64,
    scales: Scales,
}

/// Dense drift check of `traj`; returns the report and its buffers.
fn dense_check(env: &Context, traj: &NominalTrajectory, active: bool) -> Result<(SafetyReport, BufferField)> {
    let grid = drift_grid(env.chance.t_safe, env.chance.gamma_verify)?;
    let kf = traj.n_nodes() - 1;
    let buffers = env.buffers(traj, &vec![grid.clone(); traj.n_nodes()], active)?;
    let states: Vec<_> = traj.x[..kf].iter().map(full_of).collect();
    let covs = buffers.covariances[..kf].to_vec();
    let points = free_drift_envelope_full(&states, &covs, &grid, env.ctx)?;
    let report = verify_drift_safety(&points, env.chance.r_kos, env.c)?;
    Ok((report, buffers))
}

/// Optimize an `n_nodes`-burn trajectory between the boundary states.
pub fn solve_scp(
    boundary: &Boundary,
    n_nodes: usize,
    cfg: &ScpConfig,
    chance: &ChanceConfig,
    dispersion: &DispersionConfig,
    ctx: &OrbitContext,
) -> Result<ScpResult> {
    cfg.validate(n_nodes)?;
    chance.validate()?;
    dispersion.validate()?;
    let start = Instant::now();
    let env = Context { boundary, cfg, chance, dispersion, ctx, c: chance.c()?, length: length_scale(boundary, chance) };
    let kf = n_nodes - 1;
    let sub_grid = drift_grid(chance.t_safe, chance.gamma)?;
    let mut taus = vec![sub_grid; n_nodes];

    let r_i = boundary.x_i.fixed_rows::<2>(0).into_owned();
    let r_f = boundary.x_f.fixed_rows::<2>(0).into_owned();
    let (mut positions, dxi) = initial_reference(&r_i, &r_f, cfg.tf0, n_nodes)?;
    for (k, r) in &cfg.waypoints {
        positions[*k] = *r;
    }
    let guess = NominalTrajectory::through(boundary, &positions, &vec![dxi; kf], ctx)?;
    // Converge against the nominal keep-out radius first, then switch the
    // dispersion buffers on. The straight-line guess has no meaningful burn
    // plan to disperse.
    let mut active = false;
    let buffers = env.buffers(&guess, &taus, active)?;
    let t0 = Instant::now();
    let init = env.solve(&guess, &buffers, Stage::Init, cfg.phi)?;
    let (mut reference, slack, constraints) = (init.traj, init.slack, init.constraints);
    let mut ref_buffers = env.buffers(&reference, &taus, active)?;
    let mut ref_violation = max_violation(&reference, &ref_buffers, chance.r_kos, ctx);
    let mut history = vec![IterationRecord {
        iter: 0,
        stage: Stage::Init,
        objective: reference.objective(cfg.objective),
        total_dv: reference.total_dv(),
        tf: reference.tf(),
        max_dt_change: 0.0,
        max_violation: ref_violation,
        phi: cfg.phi,
        accepted: true,
        restoration: false,
        slack,
        constraints,
        solve_s: t0.elapsed().as_secs_f64(),
        dt_reference: guess.dt.clone(),
        dt: reference.dt.clone(),
    }];

    let mut phi = cfg.phi;
    let mut mu = cfg.penalty;
    let mut converged = false;
    let mut just_rejected = false;
    let mut best: Option<NominalTrajectory> = None;
    let mut last_slack = slack;
    // The nominal phase has its own iteration budget ahead of the SCVX cap.
    let mut switched_at = if chance.buffers { None } else { Some(0) };
    for iter in 1.. {
        if switched_at.map_or(iter > cfg.max_iters, |s| iter > s + cfg.max_iters) {
            break;
        }
        let t0 = Instant::now();
        let cand = match env.solve(&reference, &ref_buffers, Stage::Scvx, phi) {
            Ok(v) => v,
            Err(Error::SingularTransfer { .. }) | Err(Error::Numerical(_)) if phi > cfg.phi * MIN_PHI => {
                phi *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        let cand_buffers = env.buffers(&cand.traj, &taus, active)?;
        let violation = max_violation(&cand.traj, &cand_buffers, chance.r_kos, ctx);
        let j_ref = reference.objective(cfg.objective);
        let j = cand.traj.objective(cfg.objective);
        let restoration = !env.feasible(&reference, ref_violation);

        // Actual against predicted merit reduction, both under the buffers
        // the subproblem was built with.
        let model_ref = max_violation(&reference, &ref_buffers, chance.r_kos, ctx);
        let model_new = max_violation(&cand.traj, &ref_buffers, chance.r_kos, ctx);
        let m_ref = env.merit(&reference, model_ref, mu, &cand.scales);
        let m_new = env.merit(&cand.traj, model_new, mu, &cand.scales);
        let m_pred = cand.predicted / cand.scales.objective + mu * cand.slack / cand.scales.length;
        let predicted = m_ref - m_pred;
        let actual = m_ref - m_new;
        let stationary = predicted <= 1e-10 * m_ref.abs().max(1.0);
        let rho = if stationary { 1.0 } else { actual / predicted };
        let accepted = if stationary { actual >= -1e-9 * m_ref.abs().max(1.0) } else { rho >= RHO_REJECT };

        let dt_change = cand.traj.dt.iter().zip(&reference.dt).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
        history.push(IterationRecord {
            iter,
            stage: Stage::Scvx,
            objective: j,
            total_dv: cand.traj.total_dv(),
            tf: cand.traj.tf(),
            max_dt_change: dt_change,
            max_violation: violation,
            phi,
            accepted,
            restoration,
            slack: cand.slack,
            constraints: cand.constraints,
            solve_s: t0.elapsed().as_secs_f64(),
            dt_reference: reference.dt.clone(),
            dt: cand.traj.dt.clone(),
        });
        debug!("scvx {iter}: J = {j:.6} viol = {violation:.3e} phi = {phi} rho = {rho:.3} accepted = {accepted}");

        let small_step = if accepted {
            let rel_obj = ((j - j_ref) / j_ref.abs().max(1e-12)).abs();
            reference = cand.traj;
            ref_buffers = cand_buffers;
            ref_violation = violation;
            last_slack = cand.slack;
            if rho < RHO_SHRINK {
                phi *= 0.5;
            } else if rho > RHO_GROW && !just_rejected {
                phi = (2.0 * phi).min(cfg.phi);
            }
            stationary || (dt_change < cfg.tol_dt && rel_obj < cfg.tol_obj)
        } else {
            phi *= 0.5;
            phi < cfg.phi * MIN_PHI
        };
        just_rejected = !accepted;
        let nominal_done = |env: &Context| -> Result<bool> {
            Ok(small_step && env.feasible(&reference, ref_violation) && dense_check(env, &reference, false)?.0.pass)
        };
        if !active && chance.buffers && (iter == cfg.max_iters || nominal_done(&env)?) {
            active = true;
            switched_at = Some(iter);
            ref_buffers = env.buffers(&reference, &taus, active)?;
            ref_violation = max_violation(&reference, &ref_buffers, chance.r_kos, ctx);
            phi = cfg.phi;
            debug!("nominal problem settled, buffers on (violation {ref_violation:.3} m)");
            continue;
        }
        if accepted && env.feasible(&reference, ref_violation) {
            let (report, _) = dense_check(&env, &reference, active)?;
            if report.pass && (active || !chance.buffers) {
                let j = reference.objective(cfg.objective);
                if best.as_ref().is_none_or(|b: &NominalTrajectory| j <= b.objective(cfg.objective)) {
                    best = Some(reference.clone());
                }
                if small_step {
                    converged = true;
                    break;
                }
            } else if !report.pass {
                // Tighten the subproblem where the dense grid found violations.
                let mut added = 0;
                for e in report.entries.iter().filter(|e| e.clearance <= 0.0) {
                    if e.node < kf && !taus[e.node].iter().any(|t| (t - e.tau).abs() < 1e-9) {
                        taus[e.node].push(e.tau);
                        added += 1;
                    }
                }
                debug!("dense check added {added} drift points");
                for t in taus.iter_mut() {
                    t.sort_by(f64::total_cmp);
                }
                ref_buffers = env.buffers(&reference, &taus, active)?;
                ref_violation = max_violation(&reference, &ref_buffers, chance.r_kos, ctx);
                continue;
            }
        }
        if !small_step || env.feasible(&reference, ref_violation) {
            continue;
        }
        if accepted && env.feasible(&reference, model_new) {
            // Only the buffer refresh moved the constraint; iterate on.
            continue;
        }
        if mu >= MAX_PENALTY {
            break;
        }
        mu *= 10.0;
        phi = cfg.phi;
        debug!("stalled while infeasible, penalty raised to {mu:e}");
    }

    if !converged {
        if let Some(b) = best.take() {
            reference = b;
            last_slack = 0.0;
            ref_violation = 0.0;
        }
    }
    if last_slack > FEASIBLE_TOL * env.length || !env.feasible(&reference, ref_violation) {
        let dv_excess = cfg.dv_max.map_or(0.0, |m| (reference.total_dv() - m).max(0.0));
        let tf_excess = cfg.tf_max.map_or(0.0, |m| (reference.tf() - m).max(0.0));
        return Err(Error::Infeasible(format!(
            "no feasible iterate with {n_nodes} nodes: keep-out violation {ref_violation:.3} m, slack {last_slack:.3} m, \
             dv over cap {dv_excess:.3e} m/s, tf over cap {tf_excess:.3e} s"
        )));
    }
    if !converged {
        warn!("no convergence in {} iterations; returning the best safe iterate", cfg.max_iters);
    }
    let (safety, buffers) = dense_check(&env, &reference, true)?;
    let elapsed_s = start.elapsed().as_secs_f64();
    info!(
        "N = {n_nodes}: dv = {:.4} m/s, tf = {:.2} min, {} iterations, {:.2} s",
        reference.total_dv(),
        reference.tf() / 60.0,
        history.len(),
        elapsed_s
    );
    Ok(ScpResult { trajectory: reference, boundary: *boundary, history, buffers, safety, converged, elapsed_s })
}

/// Outcome of the burn-count search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best: ScpResult,
    /// `(N, objective or None, status)` per candidate.
    pub table: Vec<(usize, Option<f64>, String)>,
}

/// Run [`solve_scp`] for each burn count and keep the best safe optimum.
pub fn grid_search_burn_count(
    boundary: &Boundary,
    counts: &[usize],
    cfg: &ScpConfig,
    chance: &ChanceConfig,
    dispersion: &DispersionConfig,
    ctx: &OrbitContext,
) -> Result<GridSearch> {
    if counts.is_empty() {
        return Err(Error::Domain("no burn counts to search".into()));
    }
    let runs: Vec<(usize, Result<ScpResult>)> =
        counts.par_iter().map(|&n| (n, solve_scp(boundary, n, cfg, chance, dispersion, ctx))).collect();
    let mut table = Vec::new();
    let mut best: Option<ScpResult> = None;
    let mut errors = Vec::new();
    for (n, run) in runs {
        match run {
            Ok(r) if r.safety.pass => {
                let j = r.trajectory.objective(cfg.objective);
                table.push((n, Some(j), if r.converged { "converged" } else { "not converged" }.to_string()));
                let better = best.as_ref().is_none_or(|b| {
                    let jb = b.trajectory.objective(cfg.objective);
                    j < jb - 1e-9 * jb.abs().max(1.0) || (j <= jb + 1e-9 * jb.abs().max(1.0) && n < b.trajectory.n_nodes())
                });
                if better {
                    best = Some(r);
                }
            }
            Ok(r) => table.push((n, Some(r.trajectory.objective(cfg.objective)), "safety check failed".into())),
            Err(e) => {
                table.push((n, None, e.to_string()));
                errors.push(format!("N = {n}: {e}"));
            }
        }
    }
    match best {
        Some(best) => Ok(GridSearch { best, table }),
        None => Err(Error::Infeasible(format!("no burn count produced a safe trajectory ({})", errors.join("; ")))),
    }
}
