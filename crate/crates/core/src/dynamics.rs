//! Clohessy-Wiltshire relative motion about a circular target orbit.
//!
//! Frames are target-centred LVLH: `x` radial (away from the central body),
//! `y` along-track and `z` along the orbit normal. The planar (longitudinal)
//! state is ordered `(x, y, ẋ, ẏ)`, the full state `(x, y, z, ẋ, ẏ, ż)`.
//! All quantities are SI (m, s, rad).

use nalgebra::{Matrix2x4, Matrix4, Matrix6, Vector2, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Earth gravitational parameter, m³/s².
pub const MU_EARTH: f64 = 3.986_004_418e14;

/// Longitudinal state `(x, y, ẋ, ẏ)`.
pub type PlanarState = Vector4<f64>;
/// Full state `(x, y, z, ẋ, ẏ, ż)`.
pub type State3 = Vector6<f64>;

/// Indices of the planar components inside a full state.
pub const PLANAR_IN_FULL: [usize; 4] = [0, 1, 3, 4];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitContext {
    /// Mean motion, rad/s.
    pub n: f64,
    /// Semimajor axis, m, when the orbit was given that way.
    pub a: Option<f64>,
    /// Gravitational parameter, m³/s².
    pub mu: Option<f64>,
}

impl OrbitContext {
    pub fn from_mean_motion(n: f64) -> Result<Self> {
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Domain(format!("mean motion must be positive, got {n}")));
        }
        Ok(Self { n, a: None, mu: None })
    }

    pub fn from_semimajor_axis(a: f64, mu: f64) -> Result<Self> {
        let n = mean_motion(a, mu)?;
        Ok(Self { n, a: Some(a), mu: Some(mu) })
    }

    /// Orbital period, s.
    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.n
    }
}

/// Circular-orbit mean motion `sqrt(mu / a³)`.
pub fn mean_motion(a: f64, mu: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::Domain(format!("semimajor axis must be positive, got {a}")));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("gravitational parameter must be positive, got {mu}")));
    }
    Ok((mu / (a * a * a)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Planar,
    Full3d,
}

/// A state transition matrix tagged with its model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stm {
    Planar(Matrix4<f64>),
    Full3d(Matrix6<f64>),
}

impl Stm {
    pub fn mode(&self) -> Mode {
        match self {
            Stm::Planar(_) => Mode::Planar,
            Stm::Full3d(_) => Mode::Full3d,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Stm::Planar(_) => 4,
            Stm::Full3d(_) => 6,
        }
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        match self {
            Stm::Planar(m) => m.transpose().iter().copied().collect(),
            Stm::Full3d(m) => m.transpose().iter().copied().collect(),
        }
    }
}

/// Planar plant matrix `A`.
pub fn plant_planar(ctx: &OrbitContext) -> Matrix4<f64> {
    let n = ctx.n;
    Matrix4::new(
        0.0,
        0.0,
        1.0,
        0.0, //
        0.0,
        0.0,
        0.0,
        1.0, //
        3.0 * n * n,
        0.0,
        0.0,
        2.0 * n, //
        0.0,
        0.0,
        -2.0 * n,
        0.0,
    )
}

/// Full plant matrix `A₃`.
pub fn plant_full(ctx: &OrbitContext) -> Matrix6<f64> {
    let n = ctx.n;
    let mut a = Matrix6::zeros();
    a[(0, 3)] = 1.0;
    a[(1, 4)] = 1.0;
    a[(2, 5)] = 1.0;
    a[(3, 0)] = 3.0 * n * n;
    a[(3, 4)] = 2.0 * n;
    a[(4, 3)] = -2.0 * n;
    a[(5, 2)] = -n * n;
    a
}

/// Closed-form planar STM over `dt` (negative values propagate backwards).
pub fn stm_planar(dt: f64, ctx: &OrbitContext) -> Matrix4<f64> {
    let n = ctx.n;
    let nt = n * dt;
    let (s, c) = nt.sin_cos();
    Matrix4::new(
        4.0 - 3.0 * c,
        0.0,
        s / n,
        2.0 / n * (1.0 - c),
        6.0 * (s - nt),
        1.0,
        -2.0 / n * (1.0 - c),
        (4.0 * s - 3.0 * nt) / n,
        3.0 * n * s,
        0.0,
        c,
        2.0 * s,
        -6.0 * n * (1.0 - c),
        0.0,
        -2.0 * s,
        4.0 * c - 3.0,
    )
}

/// Closed-form full STM: the planar block plus the cross-track oscillator.
pub fn stm_full(dt: f64, ctx: &OrbitContext) -> Matrix6<f64> {
    embed_planar_block(&stm_planar(dt, ctx), {
        let n = ctx.n;
        let (s, c) = (n * dt).sin_cos();
        [[c, s / n], [-n * s, c]]
    })
}

/// Analytic `dΦ/dΔt` of the planar STM.
pub fn stm_dt_derivative(dt: f64, ctx: &OrbitContext) -> Matrix4<f64> {
    let n = ctx.n;
    let (s, c) = (n * dt).sin_cos();
    Matrix4::new(
        3.0 * n * s,
        0.0,
        c,
        2.0 * s,
        6.0 * n * (c - 1.0),
        0.0,
        -2.0 * s,
        4.0 * c - 3.0,
        3.0 * n * n * c,
        0.0,
        -n * s,
        2.0 * n * c,
        -6.0 * n * n * s,
        0.0,
        -2.0 * n * c,
        -4.0 * n * s,
    )
}

/// Analytic `dΦ/dΔt` of the full STM.
pub fn stm_dt_derivative_full(dt: f64, ctx: &OrbitContext) -> Matrix6<f64> {
    embed_planar_block(&stm_dt_derivative(dt, ctx), {
        let n = ctx.n;
        let (s, c) = (n * dt).sin_cos();
        [[-n * s, c], [-n * n * c, -n * s]]
    })
}

fn embed_planar_block(planar: &Matrix4<f64>, cross: [[f64; 2]; 2]) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for (i, &fi) in PLANAR_IN_FULL.iter().enumerate() {
        for (j, &fj) in PLANAR_IN_FULL.iter().enumerate() {
            m[(fi, fj)] = planar[(i, j)];
        }
    }
    m[(2, 2)] = cross[0][0];
    m[(2, 5)] = cross[0][1];
    m[(5, 2)] = cross[1][0];
    m[(5, 5)] = cross[1][1];
    m
}

/// STM for either model. Rejects non-finite `dt`.
pub fn stm(dt: f64, ctx: &OrbitContext, mode: Mode) -> Result<Stm> {
    if !dt.is_finite() {
        return Err(Error::Domain(format!("non-finite time step {dt}")));
    }
    Ok(match mode {
        Mode::Planar => Stm::Planar(stm_planar(dt, ctx)),
        Mode::Full3d => Stm::Full3d(stm_full(dt, ctx)),
    })
}

/// Position rows `[I₂ 0₂]·Φ(τ)` of the planar STM.
pub fn stm_position_rows(tau: f64, ctx: &OrbitContext) -> Matrix2x4<f64> {
    stm_planar(tau, ctx).fixed_rows::<2>(0).into_owned()
}

/// Coast a planar state by `dt`, then add an optional velocity impulse.
pub fn propagate_planar(state: &PlanarState, dt: f64, ctx: &OrbitContext, impulse: Option<&Vector2<f64>>) -> PlanarState {
    let mut x = stm_planar(dt, ctx) * state;
    if let Some(dv) = impulse {
        x[2] += dv[0];
        x[3] += dv[1];
    }
    x
}

/// Coast a full state by `dt`, then add an optional velocity impulse.
pub fn propagate_full(state: &State3, dt: f64, ctx: &OrbitContext, impulse: Option<&Vector3<f64>>) -> State3 {
    let mut x = stm_full(dt, ctx) * state;
    if let Some(dv) = impulse {
        x[3] += dv[0];
        x[4] += dv[1];
        x[5] += dv[2];
    }
    x
}

/// Slice-based propagation that picks the model from the state length.
pub fn propagate(state: &[f64], dt: f64, ctx: &OrbitContext, impulse: Option<&[f64]>) -> Result<Vec<f64>> {
    if !dt.is_finite() || state.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite propagation input".into()));
    }
    match (state.len(), impulse.map(<[f64]>::len)) {
        (4, None | Some(2)) => {
            let dv = impulse.map(Vector2::from_column_slice);
            let out = propagate_planar(&Vector4::from_column_slice(state), dt, ctx, dv.as_ref());
            Ok(out.as_slice().to_vec())
        }
        (6, None | Some(3)) => {
            let dv = impulse.map(Vector3::from_column_slice);
            let out = propagate_full(&Vector6::from_column_slice(state), dt, ctx, dv.as_ref());
            Ok(out.as_slice().to_vec())
        }
        (s, i) => Err(Error::Dimension(format!(
            "state of length {s} with impulse of length {}",
            i.map_or("none".to_string(), |l| l.to_string())
        ))),
    }
}

/// Planar part of a full state.
pub fn planar_of(full: &State3) -> PlanarState {
    PlanarState::new(full[0], full[1], full[3], full[4])
}

/// Embed a planar state with zero cross-track motion.
pub fn full_of(planar: &PlanarState) -> State3 {
    State3::new(planar[0], planar[1], 0.0, planar[2], planar[3], 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn leo() -> OrbitContext {
        OrbitContext::from_semimajor_axis(6_738e3, MU_EARTH).unwrap()
    }

    #[test]
    fn mean_motion_leo() {
        let n = mean_motion(6_738e3, MU_EARTH).unwrap();
        assert!((n - 1.1415e-3).abs() < 5e-8, "n = {n}");
        assert_eq!(mean_motion(1.0, 1.0).unwrap(), 1.0);
        assert!(mean_motion(0.0, 1.0).is_err());
        assert!(mean_motion(1.0, -1.0).is_err());
    }

    #[test]
    fn identity_and_full_period() {
        let ctx = leo();
        assert_eq!(stm_planar(0.0, &ctx), Matrix4::identity());
        assert_eq!(stm_full(0.0, &ctx), Matrix6::identity());
        let phi = stm_planar(ctx.period(), &ctx);
        assert_relative_eq!(phi[(0, 0)], 1.0, epsilon = 1e-12);
        assert!(phi[(0, 2)].abs() < 1e-9);
    }

    #[test]
    fn derivative_at_zero_is_plant() {
        let ctx = leo();
        assert_relative_eq!(stm_dt_derivative(0.0, &ctx), plant_planar(&ctx), epsilon = 1e-15);
        assert_relative_eq!(stm_dt_derivative_full(0.0, &ctx), plant_full(&ctx), epsilon = 1e-15);
        let quarter = std::f64::consts::FRAC_PI_2 / ctx.n;
        assert_relative_eq!(stm_dt_derivative(quarter, &ctx)[(0, 0)], 3.0 * ctx.n, max_relative = 1e-12);
    }

    #[test]
    fn impulse_only_touches_velocity() {
        let ctx = leo();
        let x = PlanarState::new(10.0, -20.0, 0.1, 0.2);
        let out = propagate_planar(&x, 0.0, &ctx, Some(&Vector2::new(1.0, -1.0)));
        assert_eq!(out, PlanarState::new(10.0, -20.0, 1.1, -0.8));
    }

    #[test]
    fn dynamic_propagate_checks_dimensions() {
        let ctx = leo();
        assert!(propagate(&[0.0; 5], 1.0, &ctx, None).is_err());
        assert!(propagate(&[0.0; 4], 1.0, &ctx, Some(&[0.0; 3])).is_err());
        assert!(propagate(&[0.0; 4], f64::NAN, &ctx, None).is_err());
        let out = propagate(&[0.0, 750.0, 0.0, 0.0, 0.0, 0.0], 1800.0, &ctx, None).unwrap();
        assert_relative_eq!(out[1], 750.0, epsilon = 1e-9);
    }

    #[test]
    fn position_rows_match_stm() {
        let ctx = leo();
        let rows = stm_position_rows(1234.0, &ctx);
        let full = stm_planar(1234.0, &ctx);
        assert_eq!(rows, full.fixed_rows::<2>(0).into_owned());
        let x = PlanarState::new(3.0, 4.0, 5.0, 6.0);
        assert_eq!(stm_position_rows(0.0, &ctx) * x, Vector2::new(3.0, 4.0));
    }

    #[test]
    fn stm_rejects_nan() {
        assert!(stm(f64::INFINITY, &leo(), Mode::Planar).is_err());
        assert_eq!(stm(1.0, &leo(), Mode::Full3d).unwrap().dim(), 6);
    }
}
