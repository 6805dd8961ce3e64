//! Error sources for dispersion analysis: exponentially correlated random
//! variables (first-order Gauss-Markov), the stochastic-nav error mapping and
//! the Gates impulsive maneuver execution error model.
//!
//! Random draws are always injected by the caller. [`trial_rng`] hands out
//! deterministic per-trial substreams so ensembles can run in any order.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{check_psd, is_psd, nearest_psd, psd_sqrt, symmetrize};
use crate::{Error, Result};

/// Nominal burns below this magnitude (m/s) are not fired.
pub const NULL_BURN_MPS: f64 = 1e-9;

/// Deterministic random substream for trial `index` of an ensemble seeded by `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn standard_normal3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample(StandardNormal))
}

pub fn standard_normal6<R: Rng + ?Sized>(rng: &mut R) -> Vector6<f64> {
    Vector6::from_fn(|_, _| rng.sample(StandardNormal))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EcrvState {
    pub z: Vector6<f64>,
    /// Time constant, s. `0` is white noise, `+∞` a constant bias.
    pub tau: f64,
}

/// Step-to-step correlation `e^{-dt/τ}` of an ECRV.
pub fn ecrv_decay(dt: f64, tau: f64) -> f64 {
    if dt == 0.0 {
        1.0
    } else if tau == 0.0 {
        0.0
    } else if tau.is_infinite() {
        1.0
    } else {
        (-dt / tau).exp()
    }
}

/// Advance an ECRV by `dt` with six standard-normal draws.
///
/// `z' = z·e^{-dt/τ} + sqrt(1 − e^{-2dt/τ})·noise`, which keeps a unit
/// stationary variance for any step size.
pub fn ecrv_step(state: &EcrvState, dt: f64, noise: &Vector6<f64>) -> Result<EcrvState> {
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!("ECRV step must be non-negative, got {dt}")));
    }
    if !(state.tau >= 0.0) {
        return Err(Error::Domain(format!("ECRV time constant must be non-negative, got {}", state.tau)));
    }
    let decay = ecrv_decay(dt, state.tau);
    let gain = (1.0 - decay * decay).max(0.0).sqrt();
    Ok(EcrvState { z: state.z * decay + noise * gain, tau: state.tau })
}

/// Navigation error `sqrt(P_nav)·z` for a unit-variance ECRV sample.
pub fn nav_error(z: &Vector6<f64>, p_nav: &Matrix6<f64>) -> Result<Vector6<f64>> {
    Ok(psd_sqrt(p_nav)? * z)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GatesParams {
    /// Proportional magnitude, unitless.
    pub sigma_s: f64,
    /// Proportional pointing, rad.
    pub sigma_p: f64,
    /// Fixed magnitude, m/s.
    pub sigma_r: f64,
    /// Fixed pointing, m/s.
    pub sigma_a: f64,
}

impl GatesParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("sigma_s", self.sigma_s), ("sigma_p", self.sigma_p), ("sigma_r", self.sigma_r), ("sigma_a", self.sigma_a)]
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain(format!("Gates {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_s == 0.0 && self.sigma_p == 0.0 && self.sigma_r == 0.0 && self.sigma_a == 0.0
    }
}

/// One realization of the four Gates parameters, already scaled by their sigmas.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GatesDraws {
    pub s: f64,
    pub u: Vector3<f64>,
    pub r: f64,
    pub w: Vector3<f64>,
}

impl GatesDraws {
    pub fn sample<R: Rng + ?Sized>(p: &GatesParams, rng: &mut R) -> Self {
        let s: f64 = rng.sample(StandardNormal);
        let u = standard_normal3(rng);
        let r: f64 = rng.sample(StandardNormal);
        let w = standard_normal3(rng);
        Self { s: s * p.sigma_s, u: u * p.sigma_p, r: r * p.sigma_r, w: w * p.sigma_a }
    }
}

/// Execution error `e_s + e_p + e_r + e_a` for a nominal burn.
///
/// Null burns (below [`NULL_BURN_MPS`]) are not fired and carry no error.
pub fn gates_sample(dv_nom: &Vector3<f64>, draws: &GatesDraws) -> Vector3<f64> {
    let mag = dv_nom.norm();
    if mag < NULL_BURN_MPS {
        return Vector3::zeros();
    }
    let unit = dv_nom / mag;
    let e_s = dv_nom * draws.s;
    let e_p = draws.u.cross(dv_nom);
    let e_r = unit * draws.r;
    let e_a = draws.w.cross(&unit);
    e_s + e_p + e_r + e_a
}

/// Principal-error frame: columns `e₁ ∥ Δv`, `e₂ = e₁ × k̂ / |·|`, `e₃ = e₁ × e₂`,
/// with `k̂` the LVLH axis least aligned with `e₁` (first axis wins ties).
pub fn principal_frame(dv_nom: &Vector3<f64>) -> Matrix3<f64> {
    let e1 = dv_nom.normalize();
    let mut axis = 0;
    for i in 1..3 {
        if e1[i].abs() < e1[axis].abs() {
            axis = i;
        }
    }
    let e2 = e1.cross(&Vector3::ith(axis, 1.0)).normalize();
    let e3 = e1.cross(&e2);
    Matrix3::from_columns(&[e1, e2, e3])
}

/// LVLH covariance of the Gates error for a nominal burn. Zero for null burns.
pub fn gates_covariance(dv_nom: &Vector3<f64>, p: &GatesParams) -> Matrix3<f64> {
    let mag = dv_nom.norm();
    if mag < NULL_BURN_MPS {
        return Matrix3::zeros();
    }
    let along = p.sigma_r.powi(2) + mag * mag * p.sigma_s.powi(2);
    let cross = p.sigma_a.powi(2) + mag * mag * p.sigma_p.powi(2);
    let r = principal_frame(dv_nom);
    let pg = Matrix3::from_diagonal(&Vector3::new(along, cross, cross));
    let out = r * pg * r.transpose();
    (out + out.transpose()) * 0.5
}

/// Time-tagged navigation error covariance history.
#[derive(Clone, Debug, PartialEq)]
pub struct NavProfile {
    times: Vec<f64>,
    covariances: Vec<Matrix6<f64>>,
    /// ECRV time constant driving the nav error, s.
    pub tau: f64,
}

/// Per-axis isotropic covariance from 3σ RSS position and velocity figures.
pub fn isotropic_from_rss(pos_rss_3sigma: f64, vel_rss_3sigma: f64) -> Matrix6<f64> {
    let pos_var = (pos_rss_3sigma / 3.0).powi(2) / 3.0;
    let vel_var = (vel_rss_3sigma / 3.0).powi(2) / 3.0;
    Matrix6::from_diagonal(&Vector6::new(pos_var, pos_var, pos_var, vel_var, vel_var, vel_var))
}

impl NavProfile {
    pub fn new(points: Vec<(f64, Matrix6<f64>)>, tau: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("navigation profile needs at least one point".into()));
        }
        if !(tau >= 0.0) {
            return Err(Error::Domain(format!("ECRV time constant must be non-negative, got {tau}")));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Domain("navigation profile times must be strictly increasing".into()));
            }
        }
        for (t, p) in &points {
            if !t.is_finite() {
                return Err(Error::Domain("navigation profile time must be finite".into()));
            }
            check_psd(p).map_err(|e| Error::NotPsd(format!("nav covariance at t = {t} s: {e}")))?;
        }
        let (times, covariances) = points.into_iter().unzip();
        Ok(Self { times, covariances, tau })
    }

    /// Constant isotropic profile from 3σ RSS figures.
    pub fn isotropic(pos_rss_3sigma: f64, vel_rss_3sigma: f64, tau: f64) -> Result<Self> {
        Self::new(vec![(0.0, isotropic_from_rss(pos_rss_3sigma, vel_rss_3sigma))], tau)
    }

    /// Isotropic profile whose 3σ RSS figures relax exponentially from
    /// `start` to `floor` with time constant `decay`, sampled every `step`
    /// seconds up to `horizon`.
    pub fn exponential_decay(
        start: (f64, f64),
        floor: (f64, f64),
        decay: f64,
        horizon: f64,
        step: f64,
        tau: f64,
    ) -> Result<Self> {
        if !(decay > 0.0 && horizon >= 0.0 && step > 0.0) {
            return Err(Error::Domain("decay, horizon and step must be positive".into()));
        }
        let count = (horizon / step).ceil() as usize;
        let points = (0..=count)
            .map(|i| {
                let t = (i as f64 * step).min(horizon);
                let w = (-t / decay).exp();
                let pos = floor.0 + (start.0 - floor.0) * w;
                let vel = floor.1 + (start.1 - floor.1) * w;
                (t, isotropic_from_rss(pos, vel))
            })
            .collect::<Vec<_>>();
        let mut points = points;
        points.dedup_by(|a, b| a.0 == b.0);
        Self::new(points, tau)
    }

    /// A profile that is identically zero.
    pub fn zero() -> Self {
        Self { times: vec![0.0], covariances: vec![Matrix6::zeros()], tau: f64::INFINITY }
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, &Matrix6<f64>)> {
        self.times.iter().copied().zip(self.covariances.iter())
    }

    /// Piecewise-linear interpolation clamped at the ends, projected back to
    /// PSD if interpolation lost it.
    pub fn covariance_at(&self, t: f64) -> Matrix6<f64> {
        let idx = self.times.partition_point(|&ti| ti <= t);
        if idx == 0 {
            return self.covariances[0];
        }
        if idx == self.times.len() {
            return self.covariances[idx - 1];
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        let p = symmetrize(&(self.covariances[idx - 1] * (1.0 - w) + self.covariances[idx] * w));
        if is_psd(&p) {
            p
        } else {
            nearest_psd(&p)
        }
    }

    /// Square-root factor of the covariance at `t`.
    pub fn sqrt_at(&self, t: f64) -> Matrix6<f64> {
        // covariance_at always returns a PSD matrix
        psd_sqrt(&self.covariance_at(t)).unwrap_or_else(|_| Matrix6::zeros())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ecrv_limits() {
        let z = Vector6::new(1.0, -2.0, 0.5, 0.0, 3.0, -1.0);
        let noise = Vector6::repeat(0.25);
        let bias = ecrv_step(&EcrvState { z, tau: f64::INFINITY }, 100.0, &noise).unwrap();
        assert_eq!(bias.z, z);
        let white = ecrv_step(&EcrvState { z, tau: 0.0 }, 100.0, &noise).unwrap();
        assert_eq!(white.z, noise);
        assert!(ecrv_step(&EcrvState { z, tau: 10.0 }, -1.0, &noise).is_err());
    }

    #[test]
    fn gates_proportional_magnitude_only() {
        let draws = GatesDraws { s: 0.002, ..Default::default() };
        let e = gates_sample(&Vector3::new(1.0, 0.0, 0.0), &draws);
        assert_relative_eq!(e, Vector3::new(0.002, 0.0, 0.0), epsilon = 1e-15);
        let none = gates_sample(&Vector3::zeros(), &GatesDraws { s: 1.0, r: 1.0, ..Default::default() });
        assert_eq!(none, Vector3::zeros());
    }

    #[test]
    fn gates_covariance_along_x_is_diagonal() {
        let p = GatesParams { sigma_s: 2e-3, sigma_p: 3e-4, sigma_r: 3e-4, sigma_a: 3e-4 };
        let dv = Vector3::new(0.9245, 0.0, 0.0);
        let c = gates_covariance(&dv, &p);
        let along = p.sigma_r.powi(2) + 0.9245f64.powi(2) * p.sigma_s.powi(2);
        let cross = p.sigma_a.powi(2) + 0.9245f64.powi(2) * p.sigma_p.powi(2);
        assert_relative_eq!(c, Matrix3::from_diagonal(&Vector3::new(along, cross, cross)), epsilon = 1e-18);
        assert_eq!(gates_covariance(&Vector3::zeros(), &p), Matrix3::zeros());
    }

    #[test]
    fn principal_frame_is_orthonormal() {
        for dv in [Vector3::new(0.5415, 0.7494, 0.0), Vector3::new(0.0, 0.0, -2.0), Vector3::new(1.0, 1.0, 1.0)] {
            let r = principal_frame(&dv);
            assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(r.column(0).into_owned(), dv.normalize(), epsilon = 1e-12);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn nav_error_zero_and_table_rss() {
        assert_eq!(nav_error(&Vector6::repeat(1.0), &Matrix6::zeros()).unwrap(), Vector6::zeros());
        let p = isotropic_from_rss(233.46, 0.2249);
        let pos_rss = (p[(0, 0)] + p[(1, 1)] + p[(2, 2)]).sqrt();
        assert_relative_eq!(pos_rss, 77.82, epsilon = 1e-9);
        let mut bad = Matrix6::identity();
        bad[(0, 0)] = -1.0;
        assert!(nav_error(&Vector6::zeros(), &bad).is_err());
    }

    #[test]
    fn profile_interpolates_and_clamps() {
        let a = Matrix6::identity() * 4.0;
        let b = Matrix6::identity();
        let prof = NavProfile::new(vec![(0.0, a), (100.0, b)], 3600.0).unwrap();
        assert_eq!(prof.covariance_at(-5.0), a);
        assert_eq!(prof.covariance_at(500.0), b);
        assert_relative_eq!(prof.covariance_at(50.0), Matrix6::identity() * 2.5, epsilon = 1e-12);
        assert!(NavProfile::new(vec![(1.0, a), (1.0, b)], 1.0).is_err());
    }

    #[test]
    fn substreams_are_deterministic() {
        let mut a = trial_rng(7, 3);
        let mut b = trial_rng(7, 3);
        let mut c = trial_rng(7, 4);
        let (x, y, z): (u64, u64, u64) = (a.random(), b.random(), c.random());
        assert_eq!(x, y);
        assert_ne!(x, z);
    }
}
