//! Command implementations behind the CLI.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use nalgebra::{Matrix2, Matrix6, Vector2};
use serde::Serialize;

use crate::cli::output::{num, state_row, OutputDir, STATE_COLUMNS};
use crate::cli::plot::{self, TrajectoryPlot};
use crate::cli::scenario::{Scenario, ScenarioFile};
use crate::dynamics::{propagate_full, stm_full, OrbitContext, State3};
use crate::scp::{grid_search_burn_count, IterationRecord, Objective, ScpResult};
use crate::stochastics::{GatesParams, NavProfile};
use crate::uq::{
    closed_loop_dispersion, drift_grid, free_drift_envelope_full, plan_drift_nodes, two_impulse_plan, verify_drift_safety,
    DispersionConfig, DispersionResult, DvStat, ManeuverPlan, SafetyEntry, SafetyReport, Tag, UqMode, UqOptions,
};
use crate::{Error, Result};

/// Sampling step of nominal trajectory tables, s.
pub const TRAJECTORY_STEP: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Done,
    /// Outputs are complete but the safety check failed.
    Unsafe,
}

#[derive(Clone, Debug, Serialize)]
pub struct BurnRow {
    pub label: String,
    pub t_s: f64,
    pub t_min: f64,
    pub dv_mps: [f64; 3],
    pub magnitude_mps: f64,
    pub target: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SafetySummary {
    pub pass: bool,
    pub r_kos_m: f64,
    pub confidence_sigma: f64,
    pub t_safe_s: f64,
    pub gamma_s: f64,
    pub points: usize,
    pub violations: usize,
    pub min_clearance_m: f64,
    pub worst: Option<SafetyEntry>,
}

impl SafetySummary {
    fn new(r: &SafetyReport, t_safe: f64, gamma: f64) -> Self {
        Self {
            pass: r.pass,
            r_kos_m: r.r_kos,
            confidence_sigma: r.confidence,
            t_safe_s: t_safe,
            gamma_s: gamma,
            points: r.entries.len(),
            violations: r.violations,
            min_clearance_m: r.min_clearance,
            worst: r.worst,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchRow {
    pub burns: usize,
    pub objective: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizationSummary {
    pub objective: Objective,
    pub burns: usize,
    pub converged: bool,
    pub solve_s: f64,
    pub search: Vec<SearchRow>,
    pub safety: SafetySummary,
    pub history: Vec<IterationRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DispersionSummary {
    pub mode: UqMode,
    pub trials: usize,
    pub seed: u64,
    pub total_dv: DvStat,
    pub per_burn_dv: Vec<DvStat>,
    pub final_position_sigma_m: [f64; 3],
    pub final_velocity_sigma_mps: [f64; 3],
    pub nav_containment: Option<f64>,
}

/// Machine-readable record of one command run.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: &'static str,
    /// The resolved scenario in SI units.
    pub scenario: ScenarioFile,
    pub burns: Vec<BurnRow>,
    pub total_dv_mps: f64,
    pub time_of_flight_s: f64,
    pub safety: Option<SafetySummary>,
    pub optimization: Option<OptimizationSummary>,
    pub dispersion: Option<DispersionSummary>,
    pub timings_s: BTreeMap<String, f64>,
}

/// Where a command takes its plan from.
#[derive(Clone, Debug)]
pub enum PlanSource<'a> {
    File(&'a Path),
    Waypoints,
    Optimize,
}

pub struct Session<'a> {
    scenario: &'a Scenario,
    out: OutputDir,
    plots: bool,
    report: RunReport,
}

impl<'a> Session<'a> {
    pub fn new(command: &str, scenario: &'a Scenario, out_dir: &Path, plots: bool) -> Result<Self> {
        let report = RunReport {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            scenario: scenario.to_file(),
            burns: Vec::new(),
            total_dv_mps: 0.0,
            time_of_flight_s: 0.0,
            safety: None,
            optimization: None,
            dispersion: None,
            timings_s: BTreeMap::new(),
        };
        Ok(Self { scenario, out: OutputDir::create(out_dir)?, plots, report })
    }

    fn ctx(&self) -> &OrbitContext {
        &self.scenario.orbit
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self);
        self.report.timings_s.insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }

    /// Run `f` and write the report, or flag partial outputs on error.
    pub fn run(mut self, f: impl FnOnce(&mut Self) -> Result<Verdict>) -> Result<Verdict> {
        let start = Instant::now();
        let result = f(&mut self).and_then(|v| {
            self.report.timings_s.insert("total".into(), start.elapsed().as_secs_f64());
            self.out.json("report.json", &self.report)?;
            Ok(v)
        });
        if let Err(e) = &result {
            warn!("{} failed: {e}", self.report.command);
            self.out.mark_failed();
        }
        result
    }

    pub fn plan(&mut self, source: PlanSource) -> Result<(ManeuverPlan, Verdict)> {
        match source {
            PlanSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                let plan: ManeuverPlan = serde_json::from_str(&text).map_err(|e| Error::schema("--plan", e.to_string()))?;
                plan.validate().map_err(|e| Error::schema("--plan", e.to_string()))?;
                self.record_plan(&plan)?;
                Ok((plan, Verdict::Done))
            }
            PlanSource::Waypoints => {
                let plan = self.timed("target", |s| {
                    if s.scenario.waypoints.len() < 2 {
                        return Err(Error::schema("waypoints", "at least two waypoints are required to build a plan"));
                    }
                    two_impulse_plan(&s.scenario.waypoints, s.ctx())
                })?;
                self.record_plan(&plan)?;
                if self.plots {
                    self.plot_plan(&plan, "trajectory.svg", "Nominal trajectory", &[], &[])?;
                }
                Ok((plan, Verdict::Done))
            }
            PlanSource::Optimize => self.optimize(),
        }
    }

    /// Plan tables: plan.json, burns.csv and trajectory.csv.
    fn record_plan(&mut self, plan: &ManeuverPlan) -> Result<()> {
        let rows: Vec<BurnRow> = plan
            .burns
            .iter()
            .map(|b| BurnRow {
                label: b.label.clone(),
                t_s: b.t,
                t_min: b.t / 60.0,
                dv_mps: [b.dv[0], b.dv[1], b.dv[2]],
                magnitude_mps: b.dv.norm(),
                target: b.target_waypoint.clone(),
            })
            .collect();
        self.report.total_dv_mps = rows.iter().map(|r| r.magnitude_mps).sum();
        self.report.time_of_flight_s = plan.final_time();
        self.out.json("plan.json", plan)?;
        self.out.csv(
            "burns.csv",
            &["label", "t_s", "dvx_mps", "dvy_mps", "dvz_mps", "dv_mps", "target"],
            rows.iter().map(|r| {
                vec![
                    r.label.clone(),
                    num(r.t_s),
                    num(r.dv_mps[0]),
                    num(r.dv_mps[1]),
                    num(r.dv_mps[2]),
                    num(r.magnitude_mps),
                    r.target.clone().unwrap_or_default(),
                ]
            }),
        )?;
        let samples = plan.sample(TRAJECTORY_STEP, self.ctx());
        self.out.csv("trajectory.csv", &STATE_COLUMNS, samples.iter().map(|(t, x, e)| state_row(*t, x, e)))?;
        self.report.burns = rows;
        Ok(())
    }

    fn plot_plan(
        &mut self,
        plan: &ManeuverPlan,
        name: &str,
        title: &str,
        tube: &[(Vector2<f64>, Matrix2<f64>)],
        trials: &[Vec<Vector2<f64>>],
    ) -> Result<()> {
        let path: Vec<Vector2<f64>> = plan.sample(TRAJECTORY_STEP, self.ctx()).iter().map(|(_, x, _)| in_plane(x)).collect();
        let burns: Vec<_> = plan
            .nominal_states(self.ctx())
            .iter()
            .zip(&plan.burns)
            .map(|((pre, _), b)| (in_plane(pre), Vector2::new(b.dv[0], b.dv[1])))
            .collect();
        let svg = TrajectoryPlot {
            title,
            path: &path,
            burns: &burns,
            r_kos: self.scenario.chance.r_kos,
            tube,
            confidence: self.scenario.confidence,
            trials,
        }
        .render();
        self.out.write(name, svg.as_bytes())?;
        Ok(())
    }

    fn optimize(&mut self) -> Result<(ManeuverPlan, Verdict)> {
        let s = self.scenario;
        let boundary = s.boundary()?;
        let dispersion = match (&s.dispersion, s.chance.buffers) {
            (Some(d), _) => d.config.clone(),
            (None, false) => DispersionConfig::new(Matrix6::zeros(), NavProfile::zero(), GatesParams::default()),
            (None, true) => return Err(Error::schema("dispersion", "required by chance-constrained optimization")),
        };
        let counts = s.scp.counts();
        let cfg = &s.scp.config;
        info!("optimizing {:?} over burn counts {:?}", cfg.objective, counts);
        let search = self.timed("optimize", |se| {
            grid_search_burn_count(&boundary, &counts, cfg, &se.scenario.chance, &dispersion, se.ctx())
        })?;
        let best: &ScpResult = &search.best;
        let plan = best.trajectory.to_plan(&boundary);

        let records: Vec<_> =
            best.history.iter().map(|h| IterationLine { burns: best.trajectory.n_nodes(), record: h }).collect();
        self.out.json_lines("iterations.jsonl", &records)?;
        let search_rows: Vec<SearchRow> =
            search.table.iter().map(|(n, j, st)| SearchRow { burns: *n, objective: *j, status: st.clone() }).collect();
        self.out.csv(
            "search.csv",
            &["burns", "objective", "status"],
            search_rows.iter().map(|r| vec![r.burns.to_string(), r.objective.map(num).unwrap_or_default(), r.status.clone()]),
        )?;
        self.record_plan(&plan)?;
        self.write_safety("optimize_safety.csv", &best.safety, &best.trajectory.times())?;
        let safety = SafetySummary::new(&best.safety, s.chance.t_safe, s.chance.gamma_verify);
        self.report.optimization = Some(OptimizationSummary {
            objective: cfg.objective,
            burns: best.trajectory.n_nodes(),
            converged: best.converged,
            solve_s: best.elapsed_s,
            search: search_rows,
            safety,
            history: best.history.clone(),
        });
        if self.plots {
            let tube: Vec<_> = best
                .trajectory
                .x
                .iter()
                .zip(&best.buffers.covariances)
                .map(|(x, p)| (Vector2::new(x[0], x[1]), planar_block(p)))
                .collect();
            self.plot_plan(&plan, "trajectory.svg", "Optimized trajectory", &tube, &[])?;
        }
        let verdict = if best.safety.pass { Verdict::Done } else { Verdict::Unsafe };
        Ok((plan, verdict))
    }

    pub fn disperse(&mut self, plan: &ManeuverPlan) -> Result<DispersionResult> {
        let cfg = self.scenario.dispersion()?.clone();
        let opts = self.scenario.uq;
        let result = self.timed("disperse", |s| closed_loop_dispersion(plan, &cfg, s.ctx(), &opts))?;
        let nominal = plan.nominal_states(self.ctx());

        let mut header = vec!["t_s".to_string(), "tag".into(), "burn".into()];
        header.extend((0..6).flat_map(|i| (0..6).map(move |j| format!("p{i}{j}"))));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        self.out.csv(
            "covariance.csv",
            &header,
            result.history.iter().map(|e| {
                let mut row = vec![num(e.t), tag_name(e.tag).to_string(), e.burn.map(|b| b.to_string()).unwrap_or_default()];
                row.extend((0..6).flat_map(|i| (0..6).map(move |j| num(e.p[(i, j)]))));
                row
            }),
        )?;
        if let Some(ens) = &result.ensemble {
            let mut header = vec!["trial"];
            header.extend(STATE_COLUMNS);
            let rows = ens.states.iter().enumerate().flat_map(|(i, states)| {
                states.iter().zip(&ens.times).zip(&ens.tags).map(move |((x, t), tag)| {
                    let mut row = vec![i.to_string()];
                    row.extend(state_row(*t, x, tag_name(*tag)));
                    row
                })
            });
            self.out.csv("trials.csv", &header, rows)?;
        }
        self.out.json("dv_stats.json", &result.dv)?;

        let last = result.history.last().map_or(Matrix6::zeros(), |e| e.p);
        let sd = |i: usize| last[(i, i)].max(0.0).sqrt();
        self.report.dispersion = Some(DispersionSummary {
            mode: result.mode,
            trials: result.trials,
            seed: result.seed,
            total_dv: result.dv.total.clone(),
            per_burn_dv: result.dv.per_burn.clone(),
            final_position_sigma_m: [sd(0), sd(1), sd(2)],
            final_velocity_sigma_mps: [sd(3), sd(4), sd(5)],
            nav_containment: result.nav_containment,
        });

        if self.plots {
            let tube: Vec<_> = result
                .history
                .iter()
                .map(|e| (in_plane(&mean_at(plan, &nominal, e.t, e.tag, e.burn, self.ctx())), planar_block(&e.p)))
                .collect();
            let trials: Vec<Vec<Vector2<f64>>> = result
                .ensemble
                .as_ref()
                .map(|ens| ens.states.iter().map(|s| s.iter().map(in_plane).collect()).collect())
                .unwrap_or_default();
            self.plot_plan(plan, "dispersion.svg", "Dispersed trajectory", &tube, &trials)?;
            if let Some(h) = &result.dv.total.histogram {
                self.out.write("dv_histogram.svg", plot::histogram("Total ΔV", "ΔV (m/s)", h).as_bytes())?;
            }
        }
        Ok(result)
    }

    /// Free-drift check of every drift node of `plan` with linear
    /// covariance dispersions.
    pub fn drift_verify(&mut self, plan: &ManeuverPlan) -> Result<Verdict> {
        let s = self.scenario;
        let cfg = s.dispersion()?.clone();
        let opts = UqOptions { mode: UqMode::Lincov, history_step: 0.0, ..s.uq };
        let (times, report, drift) = self.timed("drift_verify", |se| {
            let result = closed_loop_dispersion(plan, &cfg, se.ctx(), &opts)?;
            let (times, states, covs) = plan_drift_nodes(plan, &result, se.ctx(), false)?;
            let grid = drift_grid(s.chance.t_safe, s.chance.gamma_verify)?;
            let points = free_drift_envelope_full(&states, &covs, &grid, se.ctx())?;
            let report = verify_drift_safety(&points, s.chance.r_kos, s.confidence)?;
            Ok((times, report, (states, covs, grid)))
        })?;
        self.write_safety("safety.csv", &report, &times)?;
        info!(
            "drift safety {}: min clearance {:.2} m over {} points",
            if report.pass { "pass" } else { "FAIL" },
            report.min_clearance,
            report.entries.len()
        );
        self.report.safety = Some(SafetySummary::new(&report, s.chance.t_safe, s.chance.gamma_verify));
        if self.plots {
            let (states, covs, grid) = drift;
            let stride = (grid.len() / 12).max(1);
            let mut paths = Vec::new();
            let mut tube = Vec::new();
            for (x, p) in states.iter().zip(&covs) {
                let mut path = Vec::new();
                for (j, &tau) in grid.iter().enumerate() {
                    let phi = stm_full(tau, self.ctx());
                    let m = phi * x;
                    path.push(in_plane(&m));
                    if j % stride == 0 {
                        tube.push((in_plane(&m), planar_block(&(phi * p * phi.transpose()))));
                    }
                }
                paths.push(path);
            }
            self.plot_plan(plan, "drift.svg", "Free-drift envelopes", &tube, &paths)?;
        }
        Ok(if report.pass { Verdict::Done } else { Verdict::Unsafe })
    }

    fn write_safety(&mut self, name: &str, report: &SafetyReport, node_times: &[f64]) -> Result<()> {
        self.out.csv(
            name,
            &["node", "t_node_s", "tau_s", "distance_m", "buffer_m", "clearance_m"],
            report.entries.iter().map(|e| {
                vec![
                    e.node.to_string(),
                    node_times.get(e.node).copied().map(num).unwrap_or_default(),
                    num(e.tau),
                    num(e.distance),
                    num(e.buffer),
                    num(e.clearance),
                ]
            }),
        )?;
        Ok(())
    }
}

#[derive(Serialize)]
struct IterationLine<'a> {
    burns: usize,
    #[serde(flatten)]
    record: &'a IterationRecord,
}

fn tag_name(tag: Tag) -> &'static str {
    match tag {
        Tag::PreBurn => "pre-burn",
        Tag::PostBurn => "post-burn",
        Tag::Coast => "coast",
    }
}

fn in_plane(x: &State3) -> Vector2<f64> {
    Vector2::new(x[0], x[1])
}

fn planar_block(p: &Matrix6<f64>) -> Matrix2<f64> {
    p.fixed_view::<2, 2>(0, 0).into_owned()
}

/// Nominal state at a covariance history entry.
fn mean_at(
    plan: &ManeuverPlan,
    nominal: &[(State3, State3)],
    t: f64,
    tag: Tag,
    burn: Option<usize>,
    ctx: &OrbitContext,
) -> State3 {
    match (tag, burn) {
        (Tag::PreBurn, Some(j)) => nominal[j].0,
        (Tag::PostBurn, Some(j)) => nominal[j].1,
        _ => match plan.burns.iter().rposition(|b| b.t <= t) {
            Some(j) => propagate_full(&nominal[j].1, t - plan.burns[j].t, ctx, None),
            None => propagate_full(&plan.initial_state, t, ctx, None),
        },
    }
}
