//! Free-drift (missed burn) envelopes and keep-out-sphere clearance checks.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{stm_full, stm_position_rows, OrbitContext, PlanarState, State3};
use crate::linalg::max_eigenvalue2;
use crate::uq::{DispersionResult, ManeuverPlan};
use crate::{Error, Result};

/// Drift offsets `{0, γ, …, t_safe}` with the step shrunk so it divides `t_safe`.
pub fn drift_grid(t_safe: f64, gamma: f64) -> Result<Vec<f64>> {
    if !(t_safe.is_finite() && t_safe >= 0.0) {
        return Err(Error::Domain(format!("drift horizon must be non-negative, got {t_safe}")));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Domain(format!("drift grid step must be positive, got {gamma}")));
    }
    let m = (t_safe / gamma - 1e-9).ceil().max(0.0) as usize;
    if m == 0 {
        return Ok(vec![0.0]);
    }
    Ok((0..=m).map(|i| t_safe * i as f64 / m as f64).collect())
}

/// One node drifting for `tau` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub node: usize,
    pub tau: f64,
    pub mean_pos: Vector3<f64>,
    /// Largest eigenvalue of the position covariance, m².
    pub lambda_max: f64,
}

/// Drift envelopes of full-state nodes.
pub fn free_drift_envelope_full(
    states: &[State3],
    covariances: &[Matrix6<f64>],
    grid: &[f64],
    ctx: &OrbitContext,
) -> Result<Vec<DriftPoint>> {
    if states.len() != covariances.len() {
        return Err(Error::Dimension(format!("{} nodes but {} covariances", states.len(), covariances.len())));
    }
    let phis: Vec<_> = grid.iter().map(|&tau| stm_full(tau, ctx).fixed_rows::<3>(0).into_owned()).collect();
    let mut out = Vec::with_capacity(states.len() * grid.len());
    for (k, (x, p)) in states.iter().zip(covariances).enumerate() {
        for (&tau, phi_r) in grid.iter().zip(&phis) {
            let pos: Matrix3<f64> = phi_r * p * phi_r.transpose();
            let sym = (pos + pos.transpose()) * 0.5;
            let lambda_max = sym.symmetric_eigenvalues().max().max(0.0);
            out.push(DriftPoint { node: k, tau, mean_pos: phi_r * x, lambda_max });
        }
    }
    Ok(out)
}

/// Drift envelopes of planar nodes.
pub fn free_drift_envelope_planar(
    states: &[PlanarState],
    covariances: &[Matrix4<f64>],
    grid: &[f64],
    ctx: &OrbitContext,
) -> Result<Vec<DriftPoint>> {
    if states.len() != covariances.len() {
        return Err(Error::Dimension(format!("{} nodes but {} covariances", states.len(), covariances.len())));
    }
    let phis: Vec<_> = grid.iter().map(|&tau| stm_position_rows(tau, ctx)).collect();
    let mut out = Vec::with_capacity(states.len() * grid.len());
    for (k, (x, p)) in states.iter().zip(covariances).enumerate() {
        for (&tau, phi_r) in grid.iter().zip(&phis) {
            let m = phi_r * x;
            let lambda_max = max_eigenvalue2(&(phi_r * p * phi_r.transpose()));
            out.push(DriftPoint { node: k, tau, mean_pos: Vector3::new(m[0], m[1], 0.0), lambda_max });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyEntry {
    pub node: usize,
    pub tau: f64,
    pub distance: f64,
    pub buffer: f64,
    /// `distance − r_KOS − buffer`, m.
    pub clearance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub pass: bool,
    pub r_kos: f64,
    pub confidence: f64,
    pub min_clearance: f64,
    pub worst: Option<SafetyEntry>,
    pub violations: usize,
    pub entries: Vec<SafetyEntry>,
}

impl SafetyReport {
    /// Worst entry per node.
    pub fn per_node(&self) -> Vec<SafetyEntry> {
        let mut out: Vec<SafetyEntry> = Vec::new();
        for e in &self.entries {
            match out.iter_mut().find(|w| w.node == e.node) {
                Some(w) if e.clearance < w.clearance => *w = *e,
                Some(_) => {}
                None => out.push(*e),
            }
        }
        out
    }
}

/// Check that every drift point stays `confidence` buffer radii clear of the
/// keep-out sphere.
pub fn verify_drift_safety(points: &[DriftPoint], r_kos: f64, confidence: f64) -> Result<SafetyReport> {
    if !(r_kos.is_finite() && r_kos >= 0.0) {
        return Err(Error::Domain(format!("keep-out radius must be non-negative, got {r_kos}")));
    }
    if !(confidence.is_finite() && confidence >= 0.0) {
        return Err(Error::Domain(format!("confidence multiplier must be non-negative, got {confidence}")));
    }
    let entries: Vec<SafetyEntry> = points
        .iter()
        .map(|p| {
            let distance = p.mean_pos.norm();
            let buffer = confidence * p.lambda_max.sqrt();
            SafetyEntry { node: p.node, tau: p.tau, distance, buffer, clearance: distance - r_kos - buffer }
        })
        .collect();
    let worst = entries.iter().copied().min_by(|a, b| a.clearance.total_cmp(&b.clearance));
    let violations = entries.iter().filter(|e| !(e.clearance >= 0.0)).count();
    Ok(SafetyReport {
        pass: violations == 0,
        r_kos,
        confidence,
        min_clearance: worst.map_or(f64::INFINITY, |w| w.clearance),
        worst,
        violations,
        entries,
    })
}

/// Drift nodes of a dispersed plan: the initial state and every post-burn
/// state, with the final burn's hold left out unless `include_terminal`.
pub fn plan_drift_nodes(
    plan: &ManeuverPlan,
    result: &DispersionResult,
    ctx: &OrbitContext,
    include_terminal: bool,
) -> Result<(Vec<f64>, Vec<State3>, Vec<Matrix6<f64>>)> {
    let nominal = plan.nominal_states(ctx);
    let mut times = vec![0.0];
    let mut states = vec![plan.initial_state];
    let mut covs = vec![*result.initial()];
    let last = if include_terminal { nominal.len() } else { nominal.len() - 1 };
    for (j, (_, post)) in nominal.iter().enumerate().take(last) {
        let p = result.post_burn(j).ok_or_else(|| Error::Numerical(format!("no post-burn covariance for burn {j}")))?;
        times.push(plan.burns[j].t);
        states.push(*post);
        covs.push(*p);
    }
    Ok((times, states, covs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::MU_EARTH;

    fn leo() -> OrbitContext {
        OrbitContext::from_semimajor_axis(6_738e3, MU_EARTH).unwrap()
    }

    #[test]
    fn grid_rounds_density_up() {
        let g = drift_grid(3600.0, 600.0).unwrap();
        assert_eq!(g.len(), 7);
        let g = drift_grid(1000.0, 300.0).unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[1] - 250.0).abs() < 1e-12);
        assert_eq!(drift_grid(0.0, 60.0).unwrap(), vec![0.0]);
        assert!(drift_grid(100.0, 0.0).is_err());
    }

    #[test]
    fn planar_and_full_envelopes_agree_in_plane() {
        let ctx = leo();
        let x = State3::new(-1400.0, -750.0, 0.0, 0.1, 2.4, 0.0);
        let mut p = Matrix6::identity() * 25.0;
        for i in 3..6 {
            p[(i, i)] = 1e-4;
        }
        p[(2, 2)] = 0.0;
        p[(5, 5)] = 0.0;
        let grid = drift_grid(5400.0, 60.0).unwrap();
        let full = free_drift_envelope_full(&[x], &[p], &grid, &ctx).unwrap();
        let idx = crate::dynamics::PLANAR_IN_FULL;
        let p4 = Matrix4::from_fn(|i, j| p[(idx[i], idx[j])]);
        let planar = free_drift_envelope_planar(&[crate::dynamics::planar_of(&x)], &[p4], &grid, &ctx).unwrap();
        for (a, b) in full.iter().zip(&planar) {
            assert!((a.mean_pos - b.mean_pos).norm() < 1e-9);
            assert!((a.lambda_max - b.lambda_max).abs() < 1e-9 * a.lambda_max.max(1.0));
        }
    }

    #[test]
    fn report_flags_violations() {
        let pts = [
            DriftPoint { node: 0, tau: 0.0, mean_pos: Vector3::new(500.0, 0.0, 0.0), lambda_max: 100.0 },
            DriftPoint { node: 1, tau: 60.0, mean_pos: Vector3::new(0.0, 220.0, 0.0), lambda_max: 100.0 },
        ];
        let r = verify_drift_safety(&pts, 200.0, 3.0).unwrap();
        assert!(!r.pass);
        assert_eq!(r.violations, 1);
        assert!((r.min_clearance - (220.0 - 200.0 - 30.0)).abs() < 1e-12);
        assert_eq!(r.worst.unwrap().node, 1);
    }
}
