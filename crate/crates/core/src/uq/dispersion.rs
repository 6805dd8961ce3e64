//! Closed-loop dispersion of a maneuver plan under navigation, initial-state
//! and execution errors.
//!
//! Every executed burn retargets the estimated state onto the nominal position
//! of the next executed burn; the last one only nulls the velocity error.
//! `lincov` propagates an augmented covariance
//! `[δx (6), nav ECRV (6), Gates ECRV (8), δΔV (1)]`, `mc` simulates each trial
//! on the covariance time grid, and `hybrid` keeps the analytic covariance but
//! samples the burn sequence for ΔV statistics.

use std::time::Instant;

use log::debug;
use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{stm_full, OrbitContext, State3};
use crate::linalg::{check_psd, psd_sqrt, sample_covariance};
use crate::stochastics::{
    ecrv_decay, ecrv_step, gates_sample, standard_normal6, trial_rng, EcrvState, GatesDraws, GatesParams, NavProfile,
    NULL_BURN_MPS,
};
use crate::uq::targeting::{correction_gain, lambert_correct};
use crate::uq::ManeuverPlan;
use crate::{Error, Result};

const AUG: usize = 21;
const NAV: usize = 6;
const GATES: usize = 12;
const DV: usize = 20;
type Aug = SMatrix<f64, AUG, AUG>;

/// One-sided 99th percentile of the standard normal.
const Z99: f64 = 2.326_347_874_040_841;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum UqMode {
    #[default]
    #[serde(rename = "lincov")]
    Lincov,
    #[serde(rename = "hybrid")]
    Hybrid,
    #[serde(rename = "mc", alias = "montecarlo")]
    MonteCarlo,
}

/// How execution errors relate from one burn to the next.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BurnCorrelation {
    #[default]
    Uncorrelated,
    /// The Gates parameters are ECRVs with this time constant, s.
    Ecrv { tau: f64 },
}

impl BurnCorrelation {
    fn tau(&self) -> f64 {
        match self {
            Self::Uncorrelated => 0.0,
            Self::Ecrv { tau } => *tau,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DispersionConfig {
    /// Initial true-state dispersion.
    pub p_x0: Matrix6<f64>,
    pub nav: NavProfile,
    pub gates: GatesParams,
    pub correlation: BurnCorrelation,
    /// Nominal burns below this magnitude are not fired, m/s. Zero fires
    /// every burn, including zero-magnitude ones.
    pub null_burn: f64,
}

impl DispersionConfig {
    pub fn new(p_x0: Matrix6<f64>, nav: NavProfile, gates: GatesParams) -> Self {
        Self { p_x0, nav, gates, correlation: BurnCorrelation::Uncorrelated, null_burn: NULL_BURN_MPS }
    }

    pub fn validate(&self) -> Result<()> {
        check_psd(&self.p_x0).map_err(|e| Error::NotPsd(format!("initial covariance: {e}")))?;
        self.gates.validate()?;
        if !(self.correlation.tau() >= 0.0) {
            return Err(Error::Domain("burn correlation time must be non-negative".into()));
        }
        if !(self.null_burn >= 0.0) {
            return Err(Error::Domain("null burn threshold must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UqOptions {
    pub mode: UqMode,
    pub trials: usize,
    pub seed: u64,
    /// Coast sampling interval of the covariance history, s; `0` records burns only.
    pub history_step: f64,
    /// Number of trials whose paths are kept for plotting.
    pub keep_trials: usize,
}

impl Default for UqOptions {
    fn default() -> Self {
        Self { mode: UqMode::Lincov, trials: 5000, seed: 0, history_step: 60.0, keep_trials: 500 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    PreBurn,
    PostBurn,
    Coast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEntry {
    pub t: f64,
    pub tag: Tag,
    pub burn: Option<usize>,
    pub p: Matrix6<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DvStat {
    pub nominal: f64,
    pub mean: f64,
    pub std: f64,
    pub p50: f64,
    pub p99: f64,
    pub histogram: Option<Histogram>,
}

impl DvStat {
    fn gaussian(nominal: f64, var: f64) -> Self {
        let std = var.max(0.0).sqrt();
        Self { nominal, mean: nominal, std, p50: nominal, p99: nominal + Z99 * std, histogram: None }
    }

    fn from_samples(nominal: f64, samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { nominal, ..Default::default() };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            nominal,
            mean,
            std: var.sqrt(),
            p50: percentile(&sorted, 0.5),
            p99: percentile(&sorted, 0.99),
            histogram: Some(histogram(&sorted, 30)),
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn histogram(sorted: &[f64], bins: usize) -> Histogram {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0u64; bins];
    for s in sorted {
        let i = (((s - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DvStats {
    pub per_burn: Vec<DvStat>,
    pub total: DvStat,
}

/// Trial paths kept for plotting, aligned with `times`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub tags: Vec<Tag>,
    pub states: Vec<Vec<State3>>,
    pub nav_errors: Vec<Vec<Vector6<f64>>>,
    /// Per-component nav 1σ at each sample.
    pub nav_sigma: Vec<Vector6<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionResult {
    pub mode: UqMode,
    pub trials: usize,
    pub seed: u64,
    pub history: Vec<CovarianceEntry>,
    pub dv: DvStats,
    pub ensemble: Option<Ensemble>,
    /// Fraction of sampled nav error components within 3σ.
    pub nav_containment: Option<f64>,
    pub elapsed_s: f64,
}

impl DispersionResult {
    fn entry(&self, tag: Tag, burn: usize) -> Option<&CovarianceEntry> {
        self.history.iter().find(|e| e.tag == tag && e.burn == Some(burn))
    }

    pub fn pre_burn(&self, burn: usize) -> Option<&Matrix6<f64>> {
        self.entry(Tag::PreBurn, burn).map(|e| &e.p)
    }

    pub fn post_burn(&self, burn: usize) -> Option<&Matrix6<f64>> {
        self.entry(Tag::PostBurn, burn).map(|e| &e.p)
    }

    /// Covariance at `t = 0` before anything fires.
    pub fn initial(&self) -> &Matrix6<f64> {
        &self.history[0].p
    }
}

/// What a burn does in closed loop.
#[derive(Clone, Debug)]
struct BurnLaw {
    t: f64,
    dv: Vector3<f64>,
    fired: bool,
    /// `(tof, gain, target position, target velocity)` toward the next fired burn.
    target: Option<(f64, Matrix3<f64>, Vector3<f64>, Vector3<f64>)>,
    /// Nominal post-burn velocity, used by the last fired burn.
    v_post: Vector3<f64>,
}

fn burn_laws(plan: &ManeuverPlan, cfg: &DispersionConfig, ctx: &OrbitContext) -> Result<Vec<BurnLaw>> {
    let nominal = plan.nominal_states(ctx);
    let fired: Vec<bool> = plan.burns.iter().map(|b| cfg.null_burn == 0.0 || b.dv.norm() >= cfg.null_burn).collect();
    let mut laws = Vec::with_capacity(plan.burns.len());
    for (j, b) in plan.burns.iter().enumerate() {
        let next = (j + 1..plan.burns.len()).find(|&i| fired[i]);
        let target = match next {
            Some(i) if fired[j] => {
                let tof = plan.burns[i].t - b.t;
                let (pre, _) = nominal[i];
                Some((tof, correction_gain(tof, ctx)?, pre.fixed_rows::<3>(0).into_owned(), pre.fixed_rows::<3>(3).into_owned()))
            }
            _ => None,
        };
        laws.push(BurnLaw { t: b.t, dv: b.dv, fired: fired[j], target, v_post: nominal[j].1.fixed_rows::<3>(3).into_owned() });
    }
    Ok(laws)
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Coast,
    Burn(usize),
}

/// Time-ordered events: coast samples on the history grid plus burns.
fn schedule(laws: &[BurnLaw], step: f64) -> Vec<(f64, Slot)> {
    let mut out = Vec::new();
    let end = laws.last().map_or(0.0, |l| l.t);
    let mut next_burn = 0;
    let mut k = 0usize;
    loop {
        let t = if step > 0.0 { k as f64 * step } else { f64::INFINITY };
        while next_burn < laws.len() && laws[next_burn].t <= t + 1e-9 {
            out.push((laws[next_burn].t, Slot::Burn(next_burn)));
            next_burn += 1;
        }
        if t > end + 1e-9 {
            break;
        }
        if out.last().is_none_or(|(tl, _)| (t - tl).abs() > 1e-9) {
            out.push((t, Slot::Coast));
        }
        k += 1;
    }
    if !matches!(out.first(), Some((t, _)) if *t == 0.0) {
        out.insert(0, (0.0, Slot::Coast));
    }
    out
}

/// Gates error Jacobian with respect to the unit-variance Gates ECRVs.
fn gates_jacobian(dv: &Vector3<f64>, p: &GatesParams) -> SMatrix<f64, 3, 8> {
    let mut j = SMatrix::<f64, 3, 8>::zeros();
    let mag = dv.norm();
    if mag < NULL_BURN_MPS {
        return j;
    }
    let unit = dv / mag;
    j.set_column(0, &(dv * p.sigma_s));
    j.fixed_view_mut::<3, 3>(0, 1).copy_from(&(-dv.cross_matrix() * p.sigma_p));
    j.set_column(4, &(unit * p.sigma_r));
    j.fixed_view_mut::<3, 3>(0, 5).copy_from(&(-unit.cross_matrix() * p.sigma_a));
    j
}

fn gates_draws(zeta: &SVector<f64, 8>, p: &GatesParams) -> GatesDraws {
    GatesDraws {
        s: zeta[0] * p.sigma_s,
        u: Vector3::new(zeta[1], zeta[2], zeta[3]) * p.sigma_p,
        r: zeta[4] * p.sigma_r,
        w: Vector3::new(zeta[5], zeta[6], zeta[7]) * p.sigma_a,
    }
}

fn sym<const D: usize>(m: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    (m + m.transpose()) * 0.5
}

/// Coast the augmented covariance by `dt` with the nav ECRV decaying.
fn coast_aug(p: &Aug, dt: f64, nav_tau: f64, ctx: &OrbitContext) -> Aug {
    let a = ecrv_decay(dt, nav_tau);
    let mut f = Aug::identity();
    f.fixed_view_mut::<6, 6>(0, 0).copy_from(&stm_full(dt, ctx));
    f.fixed_view_mut::<6, 6>(NAV, NAV).copy_from(&(Matrix6::identity() * a));
    let mut out = f * p * f.transpose();
    for i in NAV..NAV + 6 {
        out[(i, i)] += 1.0 - a * a;
    }
    sym(&out)
}

/// Step the Gates ECRVs across the time since the previous fired burn.
fn step_gates(p: &Aug, dt: f64, tau: f64) -> Aug {
    let a = ecrv_decay(dt, tau);
    let mut f = Aug::identity();
    for i in GATES..GATES + 8 {
        f[(i, i)] = a;
    }
    let mut out = f * p * f.transpose();
    for i in GATES..GATES + 8 {
        out[(i, i)] += 1.0 - a * a;
    }
    sym(&out)
}

/// Linear map from the augmented state to the executed ΔV deviation.
fn burn_map(law: &BurnLaw, s_nav: &Matrix6<f64>, gates: &GatesParams) -> SMatrix<f64, 3, AUG> {
    let mut l = SMatrix::<f64, 3, AUG>::zeros();
    let s_r = s_nav.fixed_rows::<3>(0);
    let s_v = s_nav.fixed_rows::<3>(3);
    l.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
    let mut lz = -s_v.into_owned();
    if let Some((_, k, _, _)) = &law.target {
        l.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-k));
        lz -= k * s_r;
    }
    l.fixed_view_mut::<3, 6>(0, NAV).copy_from(&lz);
    l.fixed_view_mut::<3, 8>(0, GATES).copy_from(&gates_jacobian(&law.dv, gates));
    l
}

struct Lincov {
    history: Vec<CovarianceEntry>,
    dv_var: Vec<f64>,
    total_var: f64,
}

fn run_lincov(laws: &[BurnLaw], events: &[(f64, Slot)], cfg: &DispersionConfig, ctx: &OrbitContext) -> Lincov {
    let mut p = Aug::zeros();
    p.fixed_view_mut::<6, 6>(0, 0).copy_from(&cfg.p_x0);
    for i in NAV..DV {
        p[(i, i)] = 1.0;
    }
    let gates_tau = cfg.correlation.tau();
    let mut t_aug = 0.0;
    let mut t_gates = 0.0;
    let mut history = Vec::with_capacity(events.len() + laws.len());
    let mut dv_var = vec![0.0; laws.len()];

    for &(t, slot) in events {
        match slot {
            Slot::Coast => {
                let phi = stm_full(t - t_aug, ctx);
                let px = p.fixed_view::<6, 6>(0, 0).into_owned();
                history.push(CovarianceEntry { t, tag: Tag::Coast, burn: None, p: sym(&(phi * px * phi.transpose())) });
            }
            Slot::Burn(j) => {
                let law = &laws[j];
                p = coast_aug(&p, t - t_aug, cfg.nav.tau, ctx);
                t_aug = t;
                let pre = p.fixed_view::<6, 6>(0, 0).into_owned();
                history.push(CovarianceEntry { t, tag: Tag::PreBurn, burn: Some(j), p: pre });
                if law.fired {
                    p = step_gates(&p, t - t_gates, gates_tau);
                    t_gates = t;
                    let l = burn_map(law, &cfg.nav.sqrt_at(t), &cfg.gates);
                    let unit = law.dv.normalize();
                    let mut m = Aug::identity();
                    let mut rows = m.fixed_view_mut::<3, AUG>(3, 0);
                    rows += l;
                    let mut d = m.fixed_view_mut::<1, AUG>(DV, 0);
                    d += unit.transpose() * l;
                    dv_var[j] = (unit.transpose() * l * p * l.transpose() * unit)[(0, 0)];
                    p = sym(&(m * p * m.transpose()));
                }
                let post = p.fixed_view::<6, 6>(0, 0).into_owned();
                history.push(CovarianceEntry { t, tag: Tag::PostBurn, burn: Some(j), p: post });
            }
        }
    }
    Lincov { history, dv_var, total_var: p[(DV, DV)] }
}

/// Per-event data shared by every trial.
struct Prepared {
    phi: Vec<Matrix6<f64>>,
    s_nav: Vec<Matrix6<f64>>,
}

struct Trial {
    /// State at every history slot (burns contribute pre and post).
    states: Vec<State3>,
    nav: Vec<Vector6<f64>>,
    dv: Vec<f64>,
    inside: u64,
    counted: u64,
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    index: usize,
    seed: u64,
    laws: &[BurnLaw],
    events: &[(f64, Slot)],
    prep: &Prepared,
    cfg: &DispersionConfig,
    x0: &State3,
    s_x0: &Matrix6<f64>,
    record: bool,
    ctx: &OrbitContext,
) -> Result<Trial> {
    let mut rng = trial_rng(seed, index as u64);
    let mut x = x0 + s_x0 * standard_normal6(&mut rng);
    let mut z = EcrvState { z: standard_normal6(&mut rng), tau: cfg.nav.tau };
    let mut zeta = SVector::<f64, 8>::from_fn(|_, _| rng.sample(StandardNormal));
    let gates_tau = cfg.correlation.tau();
    let mut t_prev = 0.0;
    let mut t_gates = 0.0;
    let cap = if record { events.len() + laws.len() } else { 0 };
    let mut out =
        Trial { states: Vec::with_capacity(cap), nav: Vec::with_capacity(cap), dv: vec![0.0; laws.len()], inside: 0, counted: 0 };

    for (e, &(t, slot)) in events.iter().enumerate() {
        let dt = t - t_prev;
        x = prep.phi[e] * x;
        z = ecrv_step(&z, dt, &standard_normal6(&mut rng))?;
        t_prev = t;
        let s = &prep.s_nav[e];
        let err = s * z.z;
        for i in 0..6 {
            let sigma = s.row(i).norm();
            if sigma > 0.0 {
                out.counted += 1;
                if err[i].abs() <= 3.0 * sigma {
                    out.inside += 1;
                }
            }
        }
        if record {
            out.states.push(x);
            out.nav.push(err);
        }
        let Slot::Burn(j) = slot else { continue };
        let law = &laws[j];
        if law.fired {
            let est = x + err;
            let cmd = match &law.target {
                Some((tof, _, r, v)) => lambert_correct(&est, r, v, *tof, ctx)?.dv1,
                None => law.v_post - est.fixed_rows::<3>(3),
            };
            let a = ecrv_decay(t - t_gates, gates_tau);
            let fresh = SVector::<f64, 8>::from_fn(|_, _| rng.sample(StandardNormal));
            zeta = zeta * a + fresh * (1.0 - a * a).max(0.0).sqrt();
            t_gates = t;
            let executed = cmd + gates_sample(&cmd, &gates_draws(&zeta, &cfg.gates));
            let mut v = x.fixed_rows_mut::<3>(3);
            v += executed;
            out.dv[j] = executed.norm();
        }
        if record {
            out.states.push(x);
            out.nav.push(err);
        }
    }
    Ok(out)
}

/// Dispersion of `plan` under `cfg`.
///
/// Results are deterministic for a given seed whatever the thread count:
/// trial `i` always draws from substream `i` and trials are reduced in order.
pub fn closed_loop_dispersion(
    plan: &ManeuverPlan,
    cfg: &DispersionConfig,
    ctx: &OrbitContext,
    opts: &UqOptions,
) -> Result<DispersionResult> {
    plan.validate()?;
    cfg.validate()?;
    if opts.mode != UqMode::Lincov && opts.trials < 2 {
        return Err(Error::Domain("sampling modes need at least two trials".into()));
    }
    let start = Instant::now();
    let laws = burn_laws(plan, cfg, ctx)?;
    let events = schedule(&laws, opts.history_step);
    let nominal_dv: Vec<f64> = laws.iter().map(|l| if l.fired { l.dv.norm() } else { 0.0 }).collect();
    let nominal_total: f64 = nominal_dv.iter().sum();

    let mut result = DispersionResult {
        mode: opts.mode,
        trials: if opts.mode == UqMode::Lincov { 0 } else { opts.trials },
        seed: opts.seed,
        history: Vec::new(),
        dv: DvStats::default(),
        ensemble: None,
        nav_containment: None,
        elapsed_s: 0.0,
    };

    if opts.mode != UqMode::MonteCarlo {
        let lc = run_lincov(&laws, &events, cfg, ctx);
        result.history = lc.history;
        result.dv = DvStats {
            per_burn: nominal_dv.iter().zip(&lc.dv_var).map(|(n, v)| DvStat::gaussian(*n, *v)).collect(),
            total: DvStat::gaussian(nominal_total, lc.total_var),
        };
    }

    if opts.mode != UqMode::Lincov {
        let burn_events: Vec<(f64, Slot)>;
        let (events_used, record) = if opts.mode == UqMode::MonteCarlo {
            (&events[..], true)
        } else {
            burn_events = laws.iter().enumerate().map(|(j, l)| (l.t, Slot::Burn(j))).collect();
            (&burn_events[..], false)
        };
        let mut t_prev = 0.0;
        let mut prep = Prepared { phi: Vec::new(), s_nav: Vec::new() };
        for &(t, _) in events_used {
            prep.phi.push(stm_full(t - t_prev, ctx));
            prep.s_nav.push(cfg.nav.sqrt_at(t));
            t_prev = t;
        }
        let s_x0 = psd_sqrt(&cfg.p_x0)?;
        let trials: Vec<Trial> = (0..opts.trials)
            .into_par_iter()
            .map(|i| run_trial(i, opts.seed, &laws, events_used, &prep, cfg, &plan.initial_state, &s_x0, record, ctx))
            .collect::<Result<_>>()?;

        let per_burn = (0..laws.len())
            .map(|j| {
                let samples: Vec<f64> = trials.iter().map(|tr| tr.dv[j]).collect();
                DvStat::from_samples(nominal_dv[j], &samples)
            })
            .collect();
        let totals: Vec<f64> = trials.iter().map(|tr| tr.dv.iter().sum()).collect();
        result.dv = DvStats { per_burn, total: DvStat::from_samples(nominal_total, &totals) };
        let inside: u64 = trials.iter().map(|t| t.inside).sum();
        let counted: u64 = trials.iter().map(|t| t.counted).sum();
        if counted > 0 {
            result.nav_containment = Some(inside as f64 / counted as f64);
        }

        if record {
            let mut times = Vec::new();
            let mut tags = Vec::new();
            let mut burns = Vec::new();
            let mut sigma = Vec::new();
            for (e, &(t, slot)) in events_used.iter().enumerate() {
                let s = Vector6::from_fn(|i, _| prep.s_nav[e].row(i).norm());
                match slot {
                    Slot::Coast => {
                        times.push(t);
                        tags.push(Tag::Coast);
                        burns.push(None);
                        sigma.push(s);
                    }
                    Slot::Burn(j) => {
                        for tag in [Tag::PreBurn, Tag::PostBurn] {
                            times.push(t);
                            tags.push(tag);
                            burns.push(Some(j));
                            sigma.push(s);
                        }
                    }
                }
            }
            result.history = (0..times.len())
                .map(|k| {
                    let samples: Vec<State3> = trials.iter().map(|tr| tr.states[k]).collect();
                    CovarianceEntry { t: times[k], tag: tags[k], burn: burns[k], p: sample_covariance(&samples) }
                })
                .collect();
            let keep = opts.keep_trials.min(trials.len());
            result.ensemble = Some(Ensemble {
                times,
                tags,
                states: trials[..keep].iter().map(|t| t.states.clone()).collect(),
                nav_errors: trials[..keep].iter().map(|t| t.nav.clone()).collect(),
                nav_sigma: sigma,
            });
        }
    }

    result.elapsed_s = start.elapsed().as_secs_f64();
    debug!("{:?} dispersion finished in {:.3} s", opts.mode, result.elapsed_s);
    Ok(result)
}
