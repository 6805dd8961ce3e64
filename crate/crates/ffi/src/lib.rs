//! C ABI for the driftsafe library.
//!
//! Objects cross the boundary as opaque handles created by `ds_*_new` or
//! `ds_*_load` functions and released with the matching `ds_*_free`. Every
//! fallible function returns a [`DsStatus`]; on failure the message is kept
//! per thread and can be read with [`ds_last_error`]. Outputs are written
//! only on success. Panics never unwind into the caller.
//!
//! Matrices are row-major `double` arrays. States are `[x, y, z, vx, vy, vz]`
//! (full) or `[x, y, vx, vy]` (planar) in m and m/s.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use driftsafe::cli::scenario::Scenario;
use driftsafe::dynamics::{self, Mode, OrbitContext};
use driftsafe::scp::{chi2_radius, grid_search_burn_count};
use driftsafe::uq::{
    closed_loop_dispersion, drift_grid, free_drift_envelope_full, plan_drift_nodes, two_impulse_plan, verify_drift_safety,
    DispersionResult, ManeuverPlan, UqMode, UqOptions,
};
use driftsafe::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Dimension = 3,
    NotPsd = 4,
    SingularTransfer = 5,
    Degenerate = 6,
    Infeasible = 7,
    Numerical = 8,
    Schema = 9,
    Io = 10,
    /// Caller buffer too small; the required length is reported.
    BufferTooSmall = 11,
    Panic = 12,
}

/// Dispersion analysis mode.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsUqMode {
    Lincov = 0,
    Hybrid = 1,
    MonteCarlo = 2,
}

/// Orbit of the target.
pub struct DsOrbit(OrbitContext);

/// Resolved scenario.
pub struct DsScenario(Scenario);

/// Impulsive maneuver plan.
pub struct DsPlan(ManeuverPlan);

/// Dispersion analysis result.
pub struct DsDispersion(DispersionResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DsStatus {
    match e {
        Error::Domain(_) => DsStatus::Domain,
        Error::Dimension(_) => DsStatus::Dimension,
        Error::NotPsd(_) => DsStatus::NotPsd,
        Error::SingularTransfer { .. } => DsStatus::SingularTransfer,
        Error::DegenerateLinearization { .. } => DsStatus::Degenerate,
        Error::Infeasible(_) => DsStatus::Infeasible,
        Error::Numerical(_) => DsStatus::Numerical,
        Error::Schema { .. } | Error::Json(_) => DsStatus::Schema,
        Error::Io { .. } => DsStatus::Io,
    }
}

/// Failure inside a wrapper: a library error or a bad argument.
enum Fail {
    Lib(Error),
    Status(DsStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(DsStatus::NullPointer, format!("{what} is NULL"))
}

/// Run `f`, mapping errors and panics to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Status(DsStatus::Domain, format!("{what} is not UTF-8")))
}

/// Copy `src` into a caller buffer of `cap` doubles.
unsafe fn fill(dst: *mut f64, cap: usize, src: &[f64]) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if cap < src.len() {
        return Err(Fail::Status(DsStatus::BufferTooSmall, format!("need {} doubles, got {cap}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Copy of the calling thread's last error message into `buf`, NUL
/// terminated and truncated to `len`. Returns the full message length
/// excluding the terminator, or 0 when there is none.
///
/// # Safety
/// `buf` must be NULL or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ds_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Orbit from its mean motion, rad/s.
///
/// # Safety
/// `orbit` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ds_orbit_new(mean_motion: f64, orbit: *mut *mut DsOrbit) -> DsStatus {
    guard(|| {
        let o = out(orbit, "orbit")?;
        *o = Box::into_raw(Box::new(DsOrbit(OrbitContext::from_mean_motion(mean_motion)?)));
        Ok(())
    })
}

/// Circular orbit of semimajor axis `a` (m) about a body of parameter `mu` (m³/s²).
///
/// # Safety
/// `orbit` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ds_orbit_from_semimajor_axis(a: f64, mu: f64, orbit: *mut *mut DsOrbit) -> DsStatus {
    guard(|| {
        let o = out(orbit, "orbit")?;
        *o = Box::into_raw(Box::new(DsOrbit(OrbitContext::from_semimajor_axis(a, mu)?)));
        Ok(())
    })
}

/// # Safety
/// `orbit` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ds_orbit_free(orbit: *mut DsOrbit) {
    if !orbit.is_null() {
        drop(Box::from_raw(orbit));
    }
}

/// # Safety
/// `orbit` must be a live handle and `n` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ds_orbit_mean_motion(orbit: *const DsOrbit, n: *mut f64) -> DsStatus {
    guard(|| {
        *out(n, "n")? = deref(orbit, "orbit")?.0.n;
        Ok(())
    })
}

/// State transition matrix over `dt` seconds, row-major. `full` selects the
/// 6×6 form (36 doubles) over the planar 4×4 one (16 doubles).
///
/// # Safety
/// `orbit` must be a live handle and `phi` valid for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_stm(orbit: *const DsOrbit, dt: f64, full: bool, phi: *mut f64, cap: usize) -> DsStatus {
    guard(|| {
        let ctx = &deref(orbit, "orbit")?.0;
        let mode = if full { Mode::Full3d } else { Mode::Planar };
        let m = dynamics::stm(dt, ctx, mode)?;
        fill(phi, cap, &m.to_row_major())
    })
}

/// Propagate a state of `dim` (4 or 6) components by `dt` seconds, then add
/// `dv` (NULL for none; 2 or 3 components to match `dim`).
///
/// # Safety
/// `state` and `result` must be valid for `dim` doubles, `dv` NULL or valid
/// for `dim / 2` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_propagate(
    orbit: *const DsOrbit,
    state: *const f64,
    dim: usize,
    dt: f64,
    dv: *const f64,
    result: *mut f64,
) -> DsStatus {
    guard(|| {
        let ctx = &deref(orbit, "orbit")?.0;
        let x = slice(state, dim, "state")?;
        let dv = if dv.is_null() { None } else { Some(slice(dv, dim / 2, "dv")?) };
        let next = dynamics::propagate(x, dt, ctx, dv)?;
        fill(result, dim, &next)
    })
}

/// Chance-constraint radius `sqrt(χ²₂(β))`.
///
/// # Safety
/// `radius` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ds_chi2_radius(beta: f64, radius: *mut f64) -> DsStatus {
    guard(|| {
        *out(radius, "radius")? = chi2_radius(beta)?;
        Ok(())
    })
}

/// Load and resolve a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string, `scenario` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ds_scenario_load(path: *const c_char, scenario: *mut *mut DsScenario) -> DsStatus {
    guard(|| {
        let path = string(path, "path")?;
        let o = out(scenario, "scenario")?;
        *o = Box::into_raw(Box::new(DsScenario(Scenario::load(Path::new(path))?)));
        Ok(())
    })
}

/// # Safety
/// `scenario` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ds_scenario_free(scenario: *mut DsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Two-impulse plan through the scenario waypoints.
///
/// # Safety
/// `scenario` must be a live handle, `plan` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ds_plan_from_waypoints(scenario: *const DsScenario, plan: *mut *mut DsPlan) -> DsStatus {
    guard(|| {
        let s = &deref(scenario, "scenario")?.0;
        let o = out(plan, "plan")?;
        *o = Box::into_raw(Box::new(DsPlan(two_impulse_plan(&s.waypoints, &s.orbit)?)));
        Ok(())
    })
}

/// Optimize the scenario over its burn-count range. `total_dv` (m/s) and
/// `time_of_flight` (s) may be NULL.
///
/// # Safety
/// `scenario` must be a live handle, `plan` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ds_plan_optimize(
    scenario: *const DsScenario,
    plan: *mut *mut DsPlan,
    total_dv: *mut f64,
    time_of_flight: *mut f64,
) -> DsStatus {
    guard(|| {
        let s = &deref(scenario, "scenario")?.0;
        let o = out(plan, "plan")?;
        let boundary = s.boundary()?;
        let search = grid_search_burn_count(&boundary, &s.scp.counts(), &s.scp.config, &s.chance, s.dispersion()?, &s.orbit)?;
        let traj = &search.best.trajectory;
        if let Some(v) = total_dv.as_mut() {
            *v = traj.total_dv();
        }
        if let Some(v) = time_of_flight.as_mut() {
            *v = traj.tf();
        }
        *o = Box::into_raw(Box::new(DsPlan(traj.to_plan(&boundary))));
        Ok(())
    })
}

/// Plan from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string, `plan` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ds_plan_from_json(json: *const c_char, plan: *mut *mut DsPlan) -> DsStatus {
    guard(|| {
        let text = string(json, "json")?;
        let o = out(plan, "plan")?;
        let p: ManeuverPlan = serde_json::from_str(text).map_err(Error::from)?;
        p.validate()?;
        *o = Box::into_raw(Box::new(DsPlan(p)));
        Ok(())
    })
}

/// JSON form of a plan, released with [`ds_string_free`].
///
/// # Safety
/// `plan` must be a live handle, `json` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ds_plan_to_json(plan: *const DsPlan, json: *mut *mut c_char) -> DsStatus {
    guard(|| {
        let p = &deref(plan, "plan")?.0;
        let o = out(json, "json")?;
        let text = serde_json::to_string(p).map_err(Error::from)?;
        *o = CString::new(text).map_err(|e| Fail::Status(DsStatus::Numerical, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ds_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `plan` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ds_plan_free(plan: *mut DsPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// # Safety
/// `plan` must be a live handle and `count` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ds_plan_burn_count(plan: *const DsPlan, count: *mut usize) -> DsStatus {
    guard(|| {
        *out(count, "count")? = deref(plan, "plan")?.0.burns.len();
        Ok(())
    })
}

/// Time (s) and LVLH Δv (m/s, 3 doubles) of burn `index`.
///
/// # Safety
/// `plan` must be a live handle, `t` valid for a write, `dv` for 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_plan_burn(plan: *const DsPlan, index: usize, t: *mut f64, dv: *mut f64) -> DsStatus {
    guard(|| {
        let p = &deref(plan, "plan")?.0;
        let b = p.burns.get(index).ok_or_else(|| Fail::Status(DsStatus::Domain, format!("burn {index} of {}", p.burns.len())))?;
        let t = out(t, "t")?;
        fill(dv, 3, b.dv.as_slice())?;
        *t = b.t;
        Ok(())
    })
}

/// Dispersion of `plan` under the scenario's models. `trials` and `seed`
/// override the scenario for the sampling modes.
///
/// # Safety
/// Handles must be live, `result` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ds_disperse(
    scenario: *const DsScenario,
    plan: *const DsPlan,
    mode: DsUqMode,
    trials: usize,
    seed: u64,
    result: *mut *mut DsDispersion,
) -> DsStatus {
    guard(|| {
        let s = &deref(scenario, "scenario")?.0;
        let p = &deref(plan, "plan")?.0;
        let o = out(result, "result")?;
        let mode = match mode {
            DsUqMode::Lincov => UqMode::Lincov,
            DsUqMode::Hybrid => UqMode::Hybrid,
            DsUqMode::MonteCarlo => UqMode::MonteCarlo,
        };
        let opts = UqOptions { mode, trials, seed, ..s.uq };
        *o = Box::into_raw(Box::new(DsDispersion(closed_loop_dispersion(p, s.dispersion()?, &s.orbit, &opts)?)));
        Ok(())
    })
}

/// # Safety
/// `result` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ds_dispersion_free(result: *mut DsDispersion) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Post-burn covariance of burn `index` (36 doubles).
///
/// # Safety
/// `result` must be a live handle, `p` valid for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_dispersion_post_burn(result: *const DsDispersion, index: usize, p: *mut f64, cap: usize) -> DsStatus {
    guard(|| {
        let r = &deref(result, "result")?.0;
        let m = r.post_burn(index).ok_or_else(|| Fail::Status(DsStatus::Domain, format!("no covariance for burn {index}")))?;
        let rows: Vec<f64> = (0..6).flat_map(|i| (0..6).map(move |j| m[(i, j)])).collect();
        fill(p, cap, &rows)
    })
}

/// Mean, standard deviation and 99th percentile of the total ΔV, m/s.
///
/// # Safety
/// `result` must be a live handle; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ds_dispersion_total_dv(
    result: *const DsDispersion,
    mean: *mut f64,
    std: *mut f64,
    p99: *mut f64,
) -> DsStatus {
    guard(|| {
        let t = &deref(result, "result")?.0.dv.total;
        let (m, s, p) = (out(mean, "mean")?, out(std, "std")?, out(p99, "p99")?);
        *m = t.mean;
        *s = t.std;
        *p = t.p99;
        Ok(())
    })
}

/// Free-drift safety of `plan` with the scenario's keep-out sphere,
/// horizon and confidence. `min_clearance` (m) may be NULL.
///
/// # Safety
/// Handles must be live, `pass` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ds_drift_verify(
    scenario: *const DsScenario,
    plan: *const DsPlan,
    pass: *mut bool,
    min_clearance: *mut f64,
) -> DsStatus {
    guard(|| {
        let s = &deref(scenario, "scenario")?.0;
        let p = &deref(plan, "plan")?.0;
        let pass = out(pass, "pass")?;
        let opts = UqOptions { mode: UqMode::Lincov, history_step: 0.0, ..s.uq };
        let result = closed_loop_dispersion(p, s.dispersion()?, &s.orbit, &opts)?;
        let (_, states, covs) = plan_drift_nodes(p, &result, &s.orbit, false)?;
        let grid = drift_grid(s.chance.t_safe, s.chance.gamma_verify)?;
        let points = free_drift_envelope_full(&states, &covs, &grid, &s.orbit)?;
        let report = verify_drift_safety(&points, s.chance.r_kos, s.confidence)?;
        *pass = report.pass;
        if let Some(c) = min_clearance.as_mut() {
            *c = report.min_clearance;
        }
        Ok(())
    })
}
