//! Scenario files: JSON with unit-suffixed fields, resolved to SI.
//!
//! Every dimensioned field names its unit (`_m`, `_km`, `_mps`, `_s`,
//! `_min`, `_h`, `_rad`). Quantities that accept several units must be given
//! in exactly one of them. [`Scenario::to_file`] writes the resolved scenario
//! back in canonical SI form, which loads to the same scenario.

use std::path::{Path, PathBuf};

use log::info;
use nalgebra::{Matrix6, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{OrbitContext, State3, MU_EARTH};
use crate::scp::{Boundary, ChanceConfig, Objective, ScpConfig};
use crate::stochastics::{GatesParams, NavProfile};
use crate::uq::{BurnCorrelation, DispersionConfig, UqMode, UqOptions, Waypoint};
use crate::{Error, Result};

type V3 = [f64; 3];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub orbit: OrbitFile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<EndpointsFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waypoints: Option<Vec<WaypointFile>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chance: Option<ChanceFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<DispersionFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scp: Option<ScpFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uq: Option<UqFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semimajor_axis_km: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semimajor_axis_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_motion_rad_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_m3_s2: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointsFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_i_m: Option<V3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_i_km: Option<V3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_i_mps: Option<V3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_f_m: Option<V3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_f_km: Option<V3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_f_mps: Option<V3>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaypointFile {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_m: Option<V3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_km: Option<V3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub velocity_mps: Option<V3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_time_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hold_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hold_time_min: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChanceFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_kos_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_safe_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_safe_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_safe_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_verify_s: Option<f64>,
    /// Buffer multiplier of drift verification, in standard deviations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub buffers: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispersionFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_x0: Option<CovarianceFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nav: Option<NavFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gates: Option<GatesFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_burn_mps: Option<f64>,
}

/// Either per-axis 1σ figures or a full row-major SI covariance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_pos_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_vel_mps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance_si: Option<Vec<f64>>,
}

/// Navigation error profile in one of three forms: constant 3σ RSS figures,
/// RSS figures relaxing exponentially toward a floor, or explicit points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_pos_rss_3sigma_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_vel_rss_3sigma_mps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor_pos_rss_3sigma_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor_vel_rss_3sigma_mps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<NavPointFile>>,
    /// ECRV time constant of the nav error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_h: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavPointFile {
    pub t_s: f64,
    pub covariance_si: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatesFile {
    pub sigma_s: f64,
    pub sigma_p_rad: f64,
    pub sigma_r_mps: f64,
    pub sigma_a_mps: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationFile {
    /// `uncorrelated` or `ecrv`.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScpFile {
    /// `fuel` or `time`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tf0_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tf0_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tf_max_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tf_max_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tf_fixed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dv_max_mps: Option<f64>,
    /// Node count, first to last burn.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burns: Option<usize>,
    /// Inclusive node-count range searched for the best optimum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burns_range: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub via_points: Option<Vec<ViaPointFile>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_obj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack_penalty: Option<f64>,
}

/// A node pinned to an in-plane position.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViaPointFile {
    pub node: usize,
    pub position_m: [f64; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<UqMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history_step_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keep_trials: Option<usize>,
}

/// How the navigation profile was specified, kept for re-serialization.
#[derive(Clone, Debug, PartialEq)]
pub enum NavSpec {
    Rss { pos: f64, vel: f64 },
    Decay { start: (f64, f64), floor: (f64, f64), decay: f64, horizon: f64, step: f64 },
    Points(Vec<(f64, Matrix6<f64>)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dispersion {
    pub config: DispersionConfig,
    pub nav: NavSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Endpoints {
    pub initial: State3,
    pub terminal: State3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScpSettings {
    pub config: ScpConfig,
    /// Inclusive node-count range.
    pub burns: (usize, usize),
}

impl ScpSettings {
    pub fn counts(&self) -> Vec<usize> {
        (self.burns.0..=self.burns.1).collect()
    }
}

/// A validated scenario in SI units.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: Option<String>,
    pub orbit: OrbitContext,
    pub endpoints: Option<Endpoints>,
    pub waypoints: Vec<Waypoint>,
    pub chance: ChanceConfig,
    /// Buffer multiplier of drift verification, σ.
    pub confidence: f64,
    pub dispersion: Option<Dispersion>,
    pub scp: ScpSettings,
    pub uq: UqOptions,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

pub const DEFAULT_T_SAFE: f64 = 86_400.0;
pub const DEFAULT_BETA: f64 = 0.99;
pub const DEFAULT_CONFIDENCE: f64 = 3.0;

/// Value of a quantity given in at most one of several units, in SI.
fn one_of<T: Copy>(field: &str, options: &[(&str, Option<T>, f64)], scale: impl Fn(T, f64) -> T) -> Result<Option<T>> {
    let given: Vec<_> = options.iter().filter(|(_, v, _)| v.is_some()).collect();
    match given.as_slice() {
        [] => Ok(None),
        [(_, Some(v), f)] => Ok(Some(scale(*v, *f))),
        _ => {
            let names: Vec<_> = options.iter().map(|(n, _, _)| *n).collect();
            Err(Error::schema(field, format!("give exactly one of {}", names.join(", "))))
        }
    }
}

fn scalar(field: &str, options: &[(&str, Option<f64>, f64)]) -> Result<Option<f64>> {
    let v = one_of(field, options, |v, f| v * f)?;
    if let Some(x) = v {
        if !x.is_finite() {
            return Err(Error::schema(field, format!("must be a finite number, got {x}")));
        }
    }
    Ok(v)
}

fn vector(field: &str, options: &[(&str, Option<V3>, f64)]) -> Result<Option<Vector3<f64>>> {
    let v = one_of(field, options, |v, f| v.map(|x| x * f))?;
    if let Some(x) = v {
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::schema(field, "components must be finite"));
        }
    }
    Ok(v.map(Vector3::from))
}

fn required<T>(field: &str, unit: &str, v: Option<T>) -> Result<T> {
    v.ok_or_else(|| Error::schema(field, format!("required, in {unit}")))
}

fn non_negative(field: &str, v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::schema(field, format!("must be non-negative, got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::schema(field, format!("must be positive, got {v}")))
    }
}

fn covariance(field: &str, entries: &[f64]) -> Result<Matrix6<f64>> {
    if entries.len() != 36 {
        return Err(Error::schema(field, format!("needs 36 row-major entries in SI units, got {}", entries.len())));
    }
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::schema(field, "entries must be finite"));
    }
    Ok(Matrix6::from_row_slice(entries))
}

fn row_major(m: &Matrix6<f64>) -> Vec<f64> {
    (0..6).flat_map(|i| (0..6).map(move |j| m[(i, j)])).collect()
}

/// Re-tag a library error with the scenario field it came from.
fn at(field: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Schema { .. } => e,
        other => Error::schema(field, other.to_string()),
    }
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::schema("<root>", e.to_string()))
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let orbit = self.resolve_orbit()?;
        let endpoints = self.endpoints.as_ref().map(resolve_endpoints).transpose()?;
        let waypoints =
            self.waypoints.as_deref().unwrap_or_default().iter().enumerate().map(resolve_waypoint).collect::<Result<Vec<_>>>()?;
        for (i, w) in waypoints.iter().enumerate() {
            if waypoints[..i].iter().any(|o| o.label == w.label) {
                return Err(Error::schema(format!("waypoints[{i}].label"), format!("duplicate label {}", w.label)));
            }
        }
        let (chance, confidence) = resolve_chance(self.chance.as_ref())?;
        let dispersion = self.dispersion.as_ref().map(resolve_dispersion).transpose()?;
        let scp = resolve_scp(self.scp.as_ref(), dispersion.as_ref())?;
        let seed = self.seed.unwrap_or(0);
        let uq = resolve_uq(self.uq.as_ref(), seed)?;
        Ok(Scenario {
            name: self.name.clone(),
            orbit,
            endpoints,
            waypoints,
            chance,
            confidence,
            dispersion,
            scp,
            uq,
            seed,
            output_dir: self.output_dir.as_ref().map(PathBuf::from),
        })
    }

    fn resolve_orbit(&self) -> Result<OrbitContext> {
        let o = &self.orbit;
        let a = scalar(
            "orbit.semimajor_axis",
            &[("semimajor_axis_km", o.semimajor_axis_km, 1e3), ("semimajor_axis_m", o.semimajor_axis_m, 1.0)],
        )?;
        let mu = o.mu_m3_s2.unwrap_or(MU_EARTH);
        let n = match (a, o.mean_motion_rad_s) {
            (Some(a), None) => crate::dynamics::mean_motion(a, mu).map_err(at("orbit.semimajor_axis"))?,
            (None, Some(n)) => {
                if o.mu_m3_s2.is_some() {
                    return Err(Error::schema("orbit.mu_m3_s2", "only used with a semimajor axis"));
                }
                n
            }
            _ => {
                return Err(Error::schema("orbit", "give exactly one of semimajor_axis_km, semimajor_axis_m, mean_motion_rad_s"))
            }
        };
        OrbitContext::from_mean_motion(n).map_err(at("orbit.mean_motion_rad_s"))
    }
}

fn resolve_endpoints(e: &EndpointsFile) -> Result<Endpoints> {
    let r_i =
        required("endpoints.r_i", "m or km", vector("endpoints.r_i", &[("r_i_m", e.r_i_m, 1.0), ("r_i_km", e.r_i_km, 1e3)])?)?;
    let r_f =
        required("endpoints.r_f", "m or km", vector("endpoints.r_f", &[("r_f_m", e.r_f_m, 1.0), ("r_f_km", e.r_f_km, 1e3)])?)?;
    let v_i = required("endpoints.v_i_mps", "m/s", vector("endpoints.v_i_mps", &[("v_i_mps", e.v_i_mps, 1.0)])?)?;
    let v_f = required("endpoints.v_f_mps", "m/s", vector("endpoints.v_f_mps", &[("v_f_mps", e.v_f_mps, 1.0)])?)?;
    Ok(Endpoints { initial: stack(&r_i, &v_i), terminal: stack(&r_f, &v_f) })
}

fn stack(r: &Vector3<f64>, v: &Vector3<f64>) -> State3 {
    State3::new(r[0], r[1], r[2], v[0], v[1], v[2])
}

fn resolve_waypoint((i, w): (usize, &WaypointFile)) -> Result<Waypoint> {
    let f = |name: &str| format!("waypoints[{i}].{name}");
    if w.label.is_empty() {
        return Err(Error::schema(f("label"), "required"));
    }
    let position = required(
        &f("position"),
        "m or km",
        vector(&f("position"), &[("position_m", w.position_m, 1.0), ("position_km", w.position_km, 1e3)])?,
    )?;
    let velocity = vector(&f("velocity_mps"), &[("velocity_mps", w.velocity_mps, 1.0)])?;
    let transfer = scalar(
        &f("transfer_time"),
        &[("transfer_time_s", w.transfer_time_s, 1.0), ("transfer_time_min", w.transfer_time_min, 60.0)],
    )?
    .map(|v| positive(&f("transfer_time"), v))
    .transpose()?;
    let hold = scalar(&f("hold_time"), &[("hold_time_s", w.hold_time_s, 1.0), ("hold_time_min", w.hold_time_min, 60.0)])?
        .map(|v| non_negative(&f("hold_time"), v))
        .transpose()?;
    Ok(Waypoint::new(&w.label, position, velocity, transfer, hold))
}

fn resolve_chance(c: Option<&ChanceFile>) -> Result<(ChanceConfig, f64)> {
    let default = ChanceFile::default();
    let c = c.unwrap_or(&default);
    let defaults = ChanceConfig::default();
    let beta = match c.beta {
        Some(b) => b,
        None => {
            info!("chance.beta not given, using {DEFAULT_BETA}");
            DEFAULT_BETA
        }
    };
    let t_safe = scalar(
        "chance.t_safe",
        &[("t_safe_s", c.t_safe_s, 1.0), ("t_safe_min", c.t_safe_min, 60.0), ("t_safe_h", c.t_safe_h, 3600.0)],
    )?
    .unwrap_or(DEFAULT_T_SAFE);
    let chance = ChanceConfig {
        r_kos: non_negative("chance.r_kos_m", c.r_kos_m.unwrap_or(defaults.r_kos))?,
        beta,
        t_safe: non_negative("chance.t_safe", t_safe)?,
        gamma: positive("chance.gamma_s", c.gamma_s.unwrap_or(defaults.gamma))?,
        gamma_verify: positive("chance.gamma_verify_s", c.gamma_verify_s.unwrap_or(defaults.gamma_verify))?,
        buffers: c.buffers.unwrap_or(true),
    };
    chance.c().map_err(at("chance.beta"))?;
    chance.validate().map_err(at("chance"))?;
    let confidence = non_negative("chance.confidence_sigma", c.confidence_sigma.unwrap_or(DEFAULT_CONFIDENCE))?;
    Ok((chance, confidence))
}

fn resolve_dispersion(d: &DispersionFile) -> Result<Dispersion> {
    let p = d.p_x0.as_ref().ok_or_else(|| Error::schema("dispersion.p_x0", "required"))?;
    let p_x0 = match (&p.covariance_si, p.sigma_pos_m, p.sigma_vel_mps) {
        (Some(c), None, None) => covariance("dispersion.p_x0.covariance_si", c)?,
        (None, Some(r), Some(v)) => {
            let (r, v) = (non_negative("dispersion.p_x0.sigma_pos_m", r)?, non_negative("dispersion.p_x0.sigma_vel_mps", v)?);
            Matrix6::from_diagonal(&nalgebra::Vector6::new(r * r, r * r, r * r, v * v, v * v, v * v))
        }
        _ => return Err(Error::schema("dispersion.p_x0", "give covariance_si, or both sigma_pos_m and sigma_vel_mps")),
    };
    let nav_file = d.nav.as_ref().ok_or_else(|| Error::schema("dispersion.nav", "required"))?;
    let (nav_spec, nav) = resolve_nav(nav_file)?;
    let g = d.gates.clone().unwrap_or_default();
    let gates = GatesParams { sigma_s: g.sigma_s, sigma_p: g.sigma_p_rad, sigma_r: g.sigma_r_mps, sigma_a: g.sigma_a_mps };
    gates.validate().map_err(at("dispersion.gates"))?;
    let correlation = match &d.correlation {
        None => BurnCorrelation::Uncorrelated,
        Some(c) => match (c.kind.as_str(), c.tau_s) {
            ("uncorrelated", None) => BurnCorrelation::Uncorrelated,
            ("ecrv", Some(tau)) => BurnCorrelation::Ecrv { tau: non_negative("dispersion.correlation.tau_s", tau)? },
            ("ecrv", None) => return Err(Error::schema("dispersion.correlation.tau_s", "required for kind ecrv, in s")),
            ("uncorrelated", Some(_)) => return Err(Error::schema("dispersion.correlation.tau_s", "only used with kind ecrv")),
            (k, _) => {
                return Err(Error::schema("dispersion.correlation.kind", format!("expected uncorrelated or ecrv, got {k}")))
            }
        },
    };
    let null_burn = non_negative("dispersion.null_burn_mps", d.null_burn_mps.unwrap_or(0.0))?;
    let config = DispersionConfig { p_x0, nav, gates, correlation, null_burn };
    config.validate().map_err(at("dispersion"))?;
    Ok(Dispersion { config, nav: nav_spec })
}

fn resolve_nav(n: &NavFile) -> Result<(NavSpec, NavProfile)> {
    let tau = required(
        "dispersion.nav.tau",
        "s or h",
        scalar("dispersion.nav.tau", &[("tau_s", n.tau_s, 1.0), ("tau_h", n.tau_h, 3600.0)])?,
    )?;
    let decay_fields = [n.floor_pos_rss_3sigma_m, n.floor_vel_rss_3sigma_mps, n.decay_s, n.horizon_s, n.step_s];
    let rss = (n.sigma_pos_rss_3sigma_m, n.sigma_vel_rss_3sigma_mps);
    let spec = match (&n.points, rss) {
        (Some(points), (None, None)) if decay_fields.iter().all(Option::is_none) => {
            let pts = points
                .iter()
                .enumerate()
                .map(|(i, p)| Ok((p.t_s, covariance(&format!("dispersion.nav.points[{i}].covariance_si"), &p.covariance_si)?)))
                .collect::<Result<Vec<_>>>()?;
            NavSpec::Points(pts)
        }
        (None, (Some(pos), Some(vel))) => {
            if decay_fields.iter().all(Option::is_none) {
                NavSpec::Rss { pos, vel }
            } else {
                let get = |name: &str, unit: &str, v: Option<f64>| required(&format!("dispersion.nav.{name}"), unit, v);
                NavSpec::Decay {
                    start: (pos, vel),
                    floor: (
                        get("floor_pos_rss_3sigma_m", "m", n.floor_pos_rss_3sigma_m)?,
                        get("floor_vel_rss_3sigma_mps", "m/s", n.floor_vel_rss_3sigma_mps)?,
                    ),
                    decay: get("decay_s", "s", n.decay_s)?,
                    horizon: get("horizon_s", "s", n.horizon_s)?,
                    step: get("step_s", "s", n.step_s)?,
                }
            }
        }
        _ => {
            return Err(Error::schema(
                "dispersion.nav",
                "give points, or sigma_pos_rss_3sigma_m and sigma_vel_rss_3sigma_mps (optionally with a decay)",
            ))
        }
    };
    let profile = match &spec {
        NavSpec::Rss { pos, vel } => NavProfile::isotropic(
            non_negative("dispersion.nav.sigma_pos_rss_3sigma_m", *pos)?,
            non_negative("dispersion.nav.sigma_vel_rss_3sigma_mps", *vel)?,
            tau,
        ),
        NavSpec::Decay { start, floor, decay, horizon, step } => {
            NavProfile::exponential_decay(*start, *floor, *decay, *horizon, *step, tau)
        }
        NavSpec::Points(p) => NavProfile::new(p.clone(), tau),
    }
    .map_err(at("dispersion.nav"))?;
    Ok((spec, profile))
}

fn resolve_scp(s: Option<&ScpFile>, dispersion: Option<&Dispersion>) -> Result<ScpSettings> {
    let default = ScpFile::default();
    let s = s.unwrap_or(&default);
    let d = ScpConfig::default();
    let objective = match s.objective.as_deref() {
        None | Some("fuel") => Objective::MinFuel,
        Some("time") => Objective::MinTime,
        Some(o) => return Err(Error::schema("scp.objective", format!("expected fuel or time, got {o}"))),
    };
    let tf0 = scalar("scp.tf0", &[("tf0_s", s.tf0_s, 1.0), ("tf0_min", s.tf0_min, 60.0)])?;
    let tf_max = scalar("scp.tf_max", &[("tf_max_s", s.tf_max_s, 1.0), ("tf_max_min", s.tf_max_min, 60.0)])?;
    let burns = match (s.burns, s.burns_range) {
        (Some(n), None) => (n, n),
        (None, Some([lo, hi])) if lo <= hi => (lo, hi),
        (None, Some(_)) => return Err(Error::schema("scp.burns_range", "lower bound exceeds upper bound")),
        (None, None) => (4, 4),
        (Some(_), Some(_)) => return Err(Error::schema("scp.burns", "give exactly one of burns, burns_range")),
    };
    if burns.0 < 2 {
        return Err(Error::schema("scp.burns", "at least two burns are required"));
    }
    let config = ScpConfig {
        objective,
        tf0: tf0.or(tf_max).unwrap_or(d.tf0),
        phi: s.phi.unwrap_or(d.phi),
        max_iters: s.max_iters.unwrap_or(d.max_iters),
        tol_dt: positive("scp.tol_dt", s.tol_dt.unwrap_or(d.tol_dt))?,
        tol_obj: positive("scp.tol_obj", s.tol_obj.unwrap_or(d.tol_obj))?,
        tf_max,
        tf_fixed: s.tf_fixed.unwrap_or(false),
        dv_max: s.dv_max_mps.map(|v| positive("scp.dv_max_mps", v)).transpose()?,
        waypoints: s.via_points.as_deref().unwrap_or_default().iter().map(|v| (v.node, Vector2::from(v.position_m))).collect(),
        margin: non_negative("scp.margin_m", s.margin_m.unwrap_or(d.margin))?,
        null_burn: dispersion.map_or(0.0, |d| d.config.null_burn),
        slack_penalty: positive("scp.slack_penalty", s.slack_penalty.unwrap_or(d.slack_penalty))?,
        penalty: positive("scp.penalty", s.penalty.unwrap_or(d.penalty))?,
    };
    for n in burns.0..=burns.1 {
        config.validate(n).map_err(at("scp"))?;
    }
    Ok(ScpSettings { config, burns })
}

fn resolve_uq(u: Option<&UqFile>, seed: u64) -> Result<UqOptions> {
    let default = UqFile::default();
    let u = u.unwrap_or(&default);
    let d = UqOptions::default();
    Ok(UqOptions {
        mode: u.mode.unwrap_or(d.mode),
        trials: u.trials.unwrap_or(d.trials),
        seed,
        history_step: non_negative("uq.history_step_s", u.history_step_s.unwrap_or(d.history_step))?,
        keep_trials: u.keep_trials.unwrap_or(d.keep_trials),
    })
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        ScenarioFile::load(path)?.resolve()
    }

    /// Planar boundary states of the optimizer: the endpoints, or the first
    /// and last waypoints.
    pub fn boundary(&self) -> Result<Boundary> {
        let (xi, xf) = match (&self.endpoints, self.waypoints.as_slice()) {
            (Some(e), _) => (e.initial, e.terminal),
            (None, [first, .., last]) => {
                let v = |w: &Waypoint| {
                    w.velocity
                        .ok_or_else(|| Error::schema(format!("waypoints.{}.velocity_mps", w.label), "required for optimization"))
                };
                (stack(&first.position, &v(first)?), stack(&last.position, &v(last)?))
            }
            _ => return Err(Error::schema("endpoints", "required for optimization (or at least two waypoints)")),
        };
        for (name, x) in [("initial", xi), ("terminal", xf)] {
            if x[2] != 0.0 || x[5] != 0.0 {
                return Err(Error::schema(
                    "endpoints",
                    format!("the optimizer is planar; {name} cross-track state must be zero"),
                ));
            }
        }
        Ok(Boundary { x_i: crate::dynamics::planar_of(&xi), x_f: crate::dynamics::planar_of(&xf) })
    }

    pub fn dispersion(&self) -> Result<&DispersionConfig> {
        self.dispersion.as_ref().map(|d| &d.config).ok_or_else(|| Error::schema("dispersion", "required by this command"))
    }

    /// Canonical SI form of the scenario.
    pub fn to_file(&self) -> ScenarioFile {
        let v3 = |v: &Vector3<f64>| [v[0], v[1], v[2]];
        let head = |x: &State3| [x[0], x[1], x[2]];
        let tail = |x: &State3| [x[3], x[4], x[5]];
        let c = &self.scp.config;
        ScenarioFile {
            name: self.name.clone(),
            orbit: OrbitFile { mean_motion_rad_s: Some(self.orbit.n), ..Default::default() },
            endpoints: self.endpoints.as_ref().map(|e| EndpointsFile {
                r_i_m: Some(head(&e.initial)),
                v_i_mps: Some(tail(&e.initial)),
                r_f_m: Some(head(&e.terminal)),
                v_f_mps: Some(tail(&e.terminal)),
                ..Default::default()
            }),
            waypoints: (!self.waypoints.is_empty()).then(|| {
                self.waypoints
                    .iter()
                    .map(|w| WaypointFile {
                        label: w.label.clone(),
                        position_m: Some(v3(&w.position)),
                        velocity_mps: w.velocity.as_ref().map(v3),
                        transfer_time_s: w.transfer_time,
                        hold_time_s: w.hold_time,
                        ..Default::default()
                    })
                    .collect()
            }),
            chance: Some(ChanceFile {
                r_kos_m: Some(self.chance.r_kos),
                beta: Some(self.chance.beta),
                t_safe_s: Some(self.chance.t_safe),
                gamma_s: Some(self.chance.gamma),
                gamma_verify_s: Some(self.chance.gamma_verify),
                confidence_sigma: Some(self.confidence),
                buffers: Some(self.chance.buffers),
                ..Default::default()
            }),
            dispersion: self.dispersion.as_ref().map(|d| {
                let cfg = &d.config;
                let mut nav = NavFile { tau_s: Some(cfg.nav.tau), ..Default::default() };
                match &d.nav {
                    NavSpec::Rss { pos, vel } => {
                        nav.sigma_pos_rss_3sigma_m = Some(*pos);
                        nav.sigma_vel_rss_3sigma_mps = Some(*vel);
                    }
                    NavSpec::Decay { start, floor, decay, horizon, step } => {
                        nav.sigma_pos_rss_3sigma_m = Some(start.0);
                        nav.sigma_vel_rss_3sigma_mps = Some(start.1);
                        nav.floor_pos_rss_3sigma_m = Some(floor.0);
                        nav.floor_vel_rss_3sigma_mps = Some(floor.1);
                        nav.decay_s = Some(*decay);
                        nav.horizon_s = Some(*horizon);
                        nav.step_s = Some(*step);
                    }
                    NavSpec::Points(p) => {
                        nav.points = Some(p.iter().map(|(t, m)| NavPointFile { t_s: *t, covariance_si: row_major(m) }).collect());
                    }
                }
                DispersionFile {
                    p_x0: Some(CovarianceFile { covariance_si: Some(row_major(&cfg.p_x0)), ..Default::default() }),
                    nav: Some(nav),
                    gates: Some(GatesFile {
                        sigma_s: cfg.gates.sigma_s,
                        sigma_p_rad: cfg.gates.sigma_p,
                        sigma_r_mps: cfg.gates.sigma_r,
                        sigma_a_mps: cfg.gates.sigma_a,
                    }),
                    correlation: Some(match cfg.correlation {
                        BurnCorrelation::Uncorrelated => CorrelationFile { kind: "uncorrelated".into(), tau_s: None },
                        BurnCorrelation::Ecrv { tau } => CorrelationFile { kind: "ecrv".into(), tau_s: Some(tau) },
                    }),
                    null_burn_mps: Some(cfg.null_burn),
                }
            }),
            scp: Some(ScpFile {
                objective: Some(match c.objective {
                    Objective::MinFuel => "fuel".into(),
                    Objective::MinTime => "time".into(),
                }),
                tf0_s: Some(c.tf0),
                tf_max_s: c.tf_max,
                tf_fixed: Some(c.tf_fixed),
                dv_max_mps: c.dv_max,
                burns: (self.scp.burns.0 == self.scp.burns.1).then_some(self.scp.burns.0),
                burns_range: (self.scp.burns.0 != self.scp.burns.1).then_some([self.scp.burns.0, self.scp.burns.1]),
                via_points: (!c.waypoints.is_empty())
                    .then(|| c.waypoints.iter().map(|(k, p)| ViaPointFile { node: *k, position_m: [p[0], p[1]] }).collect()),
                phi: Some(c.phi),
                max_iters: Some(c.max_iters),
                tol_dt: Some(c.tol_dt),
                tol_obj: Some(c.tol_obj),
                margin_m: Some(c.margin),
                penalty: Some(c.penalty),
                slack_penalty: Some(c.slack_penalty),
                ..Default::default()
            }),
            uq: Some(UqFile {
                mode: Some(self.uq.mode),
                trials: Some(self.uq.trials),
                history_step_s: Some(self.uq.history_step),
                keep_trials: Some(self.uq.keep_trials),
            }),
            seed: Some(self.seed),
            output_dir: self.output_dir.as_ref().map(|p| p.display().to_string()),
        }
    }
}
