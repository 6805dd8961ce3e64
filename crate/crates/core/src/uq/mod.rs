//! Closed-loop dispersion analysis of impulsive rendezvous plans and
//! passive-abort (free drift) safety checks.

mod dispersion;
mod drift;
mod targeting;

use nalgebra::{Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_full, stm_full, OrbitContext, State3};
use crate::{Error, Result};

pub use dispersion::{
    closed_loop_dispersion, BurnCorrelation, CovarianceEntry, DispersionConfig, DispersionResult, DvStat, DvStats, Ensemble,
    Histogram, Tag, UqMode, UqOptions,
};
pub use drift::{
    drift_grid, free_drift_envelope_full, free_drift_envelope_planar, plan_drift_nodes, verify_drift_safety, DriftPoint,
    SafetyEntry, SafetyReport,
};
pub use targeting::{
    correction_gain, inverse_rv, lambert_correct, stm_blocks, two_impulse_plan, LambertCorrection, CROSS_TRACK_FLOOR,
    SINGULAR_DET,
};

/// Propagate a full-state covariance through a coast.
pub fn propagate_covariance(p: &Matrix6<f64>, dt: f64, ctx: &OrbitContext) -> Matrix6<f64> {
    let phi = stm_full(dt, ctx);
    let out = phi * p * phi.transpose();
    (out + out.transpose()) * 0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub label: String,
    /// LVLH position, m.
    pub position: Vector3<f64>,
    /// Required velocity on arrival, m/s; `None` leaves it free.
    pub velocity: Option<Vector3<f64>>,
    /// Time from arrival at the previous waypoint to arrival here, s.
    pub transfer_time: Option<f64>,
    /// Dwell before departing, s.
    pub hold_time: Option<f64>,
}

impl Waypoint {
    pub fn new(
        label: &str,
        position: Vector3<f64>,
        velocity: Option<Vector3<f64>>,
        transfer_time: Option<f64>,
        hold_time: Option<f64>,
    ) -> Self {
        Self { label: label.to_string(), position, velocity, transfer_time, hold_time }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Burn {
    /// Burn time from plan start, s.
    pub t: f64,
    /// Nominal LVLH velocity change, m/s.
    pub dv: Vector3<f64>,
    pub label: String,
    /// Waypoint this burn steers toward.
    pub target_waypoint: Option<String>,
}

impl Burn {
    pub fn new(t: f64, dv: Vector3<f64>, label: String, target_waypoint: Option<String>) -> Self {
        Self { t, dv, label, target_waypoint }
    }
}

/// An impulsive plan starting from `initial_state` at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManeuverPlan {
    pub initial_state: State3,
    pub burns: Vec<Burn>,
    #[serde(default)]
    pub waypoints: Vec<Waypoint>,
}

impl ManeuverPlan {
    pub fn validate(&self) -> Result<()> {
        if self.burns.is_empty() {
            return Err(Error::Domain("plan has no burns".into()));
        }
        if self.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("initial state is not finite".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for b in &self.burns {
            if !(b.t.is_finite() && b.t >= 0.0) {
                return Err(Error::Domain(format!("burn time {} is not a non-negative number", b.t)));
            }
            if !(b.t > prev) {
                return Err(Error::Domain("burn times must be strictly increasing".into()));
            }
            if b.dv.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("burn {} is not finite", b.label)));
            }
            prev = b.t;
        }
        Ok(())
    }

    /// Sum of nominal burn magnitudes, m/s.
    pub fn total_dv(&self) -> f64 {
        self.burns.iter().map(|b| b.dv.norm()).sum()
    }

    pub fn final_time(&self) -> f64 {
        self.burns.last().map_or(0.0, |b| b.t)
    }

    /// Nominal `(pre, post)` states at every burn.
    pub fn nominal_states(&self, ctx: &OrbitContext) -> Vec<(State3, State3)> {
        let mut out = Vec::with_capacity(self.burns.len());
        let mut state = self.initial_state;
        let mut t = 0.0;
        for b in &self.burns {
            let pre = propagate_full(&state, b.t - t, ctx, None);
            let post = propagate_full(&pre, 0.0, ctx, Some(&b.dv));
            out.push((pre, post));
            state = post;
            t = b.t;
        }
        out
    }

    /// Nominal trajectory sampled every `step` seconds, with burn instants
    /// inserted. Each sample carries an event label (empty for coasts).
    pub fn sample(&self, step: f64, ctx: &OrbitContext) -> Vec<(f64, State3, String)> {
        let nominal = self.nominal_states(ctx);
        let mut out = Vec::new();
        let mut t = 0.0;
        let mut state = self.initial_state;
        let mut seg_start = 0.0;
        for (b, (pre, post)) in self.burns.iter().zip(&nominal) {
            while step > 0.0 && t < b.t - 1e-9 {
                out.push((t, propagate_full(&state, t - seg_start, ctx, None), String::new()));
                t += step;
            }
            out.push((b.t, *pre, String::new()));
            out.push((b.t, *post, b.label.clone()));
            state = *post;
            seg_start = b.t;
            t = b.t + step;
        }
        out
    }
}
