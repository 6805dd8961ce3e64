//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O error, 2 scenario or usage error,
//! 3 infeasible, 4 safety check failed, 5 numerical error.

pub mod commands;
pub mod output;
pub mod plot;
pub mod scenario;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::scp::Objective;
use crate::uq::UqMode;
use crate::Result;
use commands::{PlanSource, Session, Verdict};
use scenario::Scenario;

pub const EXIT_UNSAFE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "driftsafe", version, about = "Passively safe impulsive rendezvous design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reconstruct the two-impulse plan through the scenario waypoints.
    Target(Common),
    /// Optimize a chance-constrained trajectory over the burn-count range.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Objective; overrides the scenario.
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
    },
    /// Closed-loop dispersion analysis of a plan.
    Disperse {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        uq: UqArgs,
        /// Plan JSON to analyze instead of the scenario waypoints.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Check the free-drift envelopes of a plan against the keep-out sphere.
    DriftVerify {
        #[command(flatten)]
        common: Common,
        /// Plan JSON to check instead of the scenario waypoints.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Plan (targeting or optimization), disperse and verify in one run.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        uq: UqArgs,
        /// Optimize with this objective instead of targeting the waypoints.
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
        /// Plan JSON to analyze instead of planning.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory; defaults to the scenario's output_dir, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Args)]
pub struct UqArgs {
    /// Random seed; overrides the scenario.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of sampled trials; overrides the scenario.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Dispersion analysis mode; overrides the scenario.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ObjectiveArg {
    Fuel,
    Time,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Lincov,
    Hybrid,
    Mc,
}

fn load(common: &Common) -> Result<(Scenario, PathBuf)> {
    let scenario = Scenario::load(&common.scenario)?;
    let out = common.out.clone().or_else(|| scenario.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((scenario, out))
}

fn apply_uq(s: &mut Scenario, uq: &UqArgs) {
    if let Some(seed) = uq.seed {
        s.seed = seed;
        s.uq.seed = seed;
    }
    if let Some(t) = uq.trials {
        s.uq.trials = t;
    }
    if let Some(m) = uq.mode {
        s.uq.mode = match m {
            ModeArg::Lincov => UqMode::Lincov,
            ModeArg::Hybrid => UqMode::Hybrid,
            ModeArg::Mc => UqMode::MonteCarlo,
        };
    }
}

fn apply_objective(s: &mut Scenario, objective: Option<ObjectiveArg>) {
    if let Some(o) = objective {
        s.scp.config.objective = match o {
            ObjectiveArg::Fuel => Objective::MinFuel,
            ObjectiveArg::Time => Objective::MinTime,
        };
    }
}

fn source(plan: Option<&Path>) -> PlanSource<'_> {
    plan.map_or(PlanSource::Waypoints, PlanSource::File)
}

/// Run one parsed command.
pub fn execute(command: &Command) -> Result<Verdict> {
    match command {
        Command::Target(common) => {
            let (s, out) = load(common)?;
            Session::new("target", &s, &out, common.plots)?.run(|se| se.plan(PlanSource::Waypoints).map(|(_, v)| v))
        }
        Command::Optimize { common, objective } => {
            let (mut s, out) = load(common)?;
            apply_objective(&mut s, *objective);
            Session::new("optimize", &s, &out, common.plots)?.run(|se| se.plan(PlanSource::Optimize).map(|(_, v)| v))
        }
        Command::Disperse { common, uq, plan } => {
            let (mut s, out) = load(common)?;
            apply_uq(&mut s, uq);
            Session::new("disperse", &s, &out, common.plots)?.run(|se| {
                let (p, _) = se.plan(source(plan.as_deref()))?;
                se.disperse(&p)?;
                Ok(Verdict::Done)
            })
        }
        Command::DriftVerify { common, plan } => {
            let (s, out) = load(common)?;
            Session::new("drift-verify", &s, &out, common.plots)?.run(|se| {
                let (p, _) = se.plan(source(plan.as_deref()))?;
                se.drift_verify(&p)
            })
        }
        Command::Report { common, uq, objective, plan } => {
            let (mut s, out) = load(common)?;
            apply_uq(&mut s, uq);
            apply_objective(&mut s, *objective);
            let src = match plan {
                Some(p) => PlanSource::File(p),
                None if objective.is_some() || s.waypoints.len() < 2 => PlanSource::Optimize,
                None => PlanSource::Waypoints,
            };
            Session::new("report", &s, &out, common.plots)?.run(|se| {
                let (p, planned) = se.plan(src)?;
                se.disperse(&p)?;
                let verified = se.drift_verify(&p)?;
                Ok(if planned == Verdict::Unsafe || verified == Verdict::Unsafe { Verdict::Unsafe } else { Verdict::Done })
            })
        }
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(Verdict::Done) => 0,
        Ok(Verdict::Unsafe) => {
            eprintln!("driftsafe: safety check failed");
            EXIT_UNSAFE
        }
        Err(e) => {
            eprintln!("driftsafe: {e}");
            e.exit_code()
        }
    }
}

/// Initialize logging from `DRIFTSAFE_LOG` (default `info`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("DRIFTSAFE_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
