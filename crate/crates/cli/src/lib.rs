//! Headless driver behind the `dlc` binary: runs scenarios with a scripted
//! or built-in operator and writes traces, scores and plot data.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use dlc_core::config::ModelConfig;
use dlc_core::error::Error as CoreError;
use dlc_core::impc::ControllerConfig;
use dlc_core::scenario::{ClockMode, ScenarioConfig};
use dlc_core::scoring::ScoreBreakdown;
use dlc_core::session::{append_ndjson, read_ndjson, Command, Session, Status};
use dlc_core::trace::{write_csv, PlotData};
use dlc_core::training::{validate_catalog, Holder, ModeId, TroubleSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const EXIT_COMPLETED: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_SHUTDOWN: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

/// Simulated minutes between handovers of the built-in partner operator.
pub const ROTATE_EVERY_MIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub scenario: PathBuf,
    pub mode: Option<ModeId>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub format: Format,
    pub script: Option<PathBuf>,
    /// Simulated seconds per wall second; unpaced when `None`.
    pub speed: Option<f64>,
}

/// One scripted command, submitted before the control period that starts
/// at step `at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timed {
    pub at: u64,
    #[serde(flatten)]
    pub command: Command,
}

/// Stand-in for the human at the console.
#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    Script(Vec<Timed>),
    /// Asks for one-step advice every period and applies it.
    FollowAdvice,
    /// Hands a single MV to the operator, moving on to the next one every
    /// `every` steps; the operator holds its value.
    Rotate {
        every: u64,
    },
    Idle,
}

impl Operator {
    pub fn for_mode(mode: ModeId, period_min: f64) -> Self {
        match mode {
            ModeId::TaskPerformer | ModeId::Troublemaker => Operator::Idle,
            ModeId::CooperationPartner => Operator::Rotate {
                every: (ROTATE_EVERY_MIN / period_min).round().max(1.0) as u64,
            },
            ModeId::OperationAdvisor => Operator::FollowAdvice,
            ModeId::SafetySupervisor => Operator::Script(vec![Timed {
                at: 0,
                command: Command::AuthorityTransfer {
                    mv: None,
                    to: Holder::Machine,
                },
            }]),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
        let mut cmds: Vec<Timed> = serde_json::from_str(&text)
            .map_err(|e| CoreError::Json(format!("{}: {e}", path.display())))?;
        cmds.sort_by_key(|c| c.at);
        Ok(Operator::Script(cmds))
    }
}

struct Driver {
    op: Operator,
    next: usize,
}

impl Driver {
    /// Submits whatever the operator does at the current step. Rejections
    /// are logged by the session and reported here.
    fn act(&mut self, s: &mut Session) -> Result<()> {
        let t = s.core().plant.t;
        let mut cmds = Vec::new();
        match &self.op {
            Operator::Idle => {}
            Operator::Script(list) => {
                while self.next < list.len() && list[self.next].at <= t {
                    cmds.push(list[self.next].command.clone());
                    self.next += 1;
                }
            }
            Operator::Rotate { every } => {
                let n = s.plant().n_u() as u64;
                if t > 0 && t % every == 0 {
                    let j = t / every;
                    let tag = |k: u64| s.plant().model.mv_tags[(k % n) as usize].clone();
                    if j >= 2 {
                        cmds.push(Command::AuthorityTransfer {
                            mv: Some(tag(j - 2)),
                            to: Holder::Machine,
                        });
                    }
                    cmds.push(Command::AuthorityTransfer {
                        mv: Some(tag(j - 1)),
                        to: Holder::Operator,
                    });
                }
            }
            Operator::FollowAdvice => {
                let advice = submit(s, Command::HelpRequest { lookahead: 1 })?;
                if let Some(a) = advice {
                    let p = s.plant();
                    for i in s.core().partition.operator_mvs() {
                        let value = a.mv[0][i].clamp(p.mv_min[i], p.mv_max[i]);
                        cmds.push(Command::MvSet {
                            mv: p.model.mv_tags[i].clone(),
                            value,
                        });
                    }
                }
            }
        }
        for c in cmds {
            submit(s, c)?;
        }
        Ok(())
    }
}

fn submit(s: &mut Session, cmd: Command) -> Result<Option<dlc_core::session::Advice>> {
    match s.submit(cmd) {
        Ok(out) => Ok(out.advice),
        Err(CoreError::Rejected(reason)) => {
            eprintln!(
                "warning: t={}: command rejected: {reason}",
                s.core().plant.t
            );
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub status: Status,
    pub exit_code: i32,
    pub steps: u64,
    pub completed_min: Option<f64>,
    pub score: Option<ScoreBreakdown>,
}

pub fn load_scenario(spec: &RunSpec) -> Result<ScenarioConfig> {
    let mut sc = ScenarioConfig::load(&spec.scenario)?;
    if let Some(seed) = spec.seed {
        sc.seed = seed;
    }
    if let Some(mode) = spec.mode {
        sc.mode = mode;
    }
    if sc.name.is_empty() {
        sc.name = spec
            .scenario
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
    }
    Ok(sc)
}

/// Runs a scenario to its end and writes the artifacts.
pub fn run_scenario(spec: &RunSpec) -> Result<RunReport> {
    let sc = load_scenario(spec)?;
    let op = match &spec.script {
        Some(p) => Operator::load(p)?,
        None => Operator::for_mode(sc.mode, sc.plant_config()?.period_min),
    };
    let pace = match (spec.speed, sc.clock.mode) {
        (Some(v), _) if v > 0.0 => Some(v),
        (None, ClockMode::RealTime) if sc.clock.speed > 0.0 => Some(sc.clock.speed),
        _ => None,
    };
    let mut s = Session::create(sc.name.clone(), sc)?;
    let mut driver = Driver { op, next: 0 };
    let tick = pace.map(|v| Duration::from_secs_f64(s.plant().period_min * 60.0 / v));
    while s.status() == Status::Running {
        driver.act(&mut s)?;
        if s.status() != Status::Running {
            break;
        }
        s.advance(1)?;
        if let Some(d) = tick {
            std::thread::sleep(d);
        }
    }
    write_artifacts(&mut s, &spec.out, spec.format)
}

pub fn exit_code(s: &Session) -> i32 {
    match s.status() {
        Status::Completed => EXIT_COMPLETED,
        Status::Shutdown => EXIT_SHUTDOWN,
        Status::Ended if !s.scenario().complete_on_band => EXIT_COMPLETED,
        Status::Ended | Status::Running => EXIT_FAILURE,
    }
}

/// Exit code for an error that stopped a run before it finished.
pub fn error_exit_code(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<CoreError>() {
        Some(CoreError::Validation(_) | CoreError::Json(_) | CoreError::Config(_)) => EXIT_INVALID,
        Some(CoreError::ShutDown) => EXIT_SHUTDOWN,
        _ => EXIT_FAILURE,
    }
}

fn report(s: &mut Session) -> Result<RunReport> {
    let period = s.plant().period_min;
    let score = match s.status() {
        Status::Running => None,
        _ => Some(s.score()?),
    };
    Ok(RunReport {
        name: s.scenario().name.clone(),
        status: s.status(),
        exit_code: exit_code(s),
        steps: s.core().plant.t,
        completed_min: s.core().completed_at.map(|t| t as f64 * period),
        score,
    })
}

pub fn plot_data(s: &Session) -> PlotData {
    let sum = s.summary();
    PlotData::from_rows(
        s.trace(),
        &sum.cv_tags,
        &sum.mv_tags,
        &sum.cv_min,
        &sum.cv_max,
    )
}

/// `<name>.trace.<fmt>`, `<name>.score.json`, `<name>.plot.json` and the
/// event log `<name>.events.ndjson` under `out`.
pub fn write_artifacts(s: &mut Session, out: &Path, format: Format) -> Result<RunReport> {
    fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    let rep = report(s)?;
    let base = |suffix: &str| out.join(format!("{}.{suffix}", rep.name));
    let sum = s.summary();
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(s.trace(), &sum.cv_tags, &sum.mv_tags, &mut buf)?;
            write(&base("trace.csv"), &buf)?;
        }
        Format::Json => write(&base("trace.json"), &pretty(&s.trace())?)?,
    }
    if let Some(score) = &rep.score {
        write(&base("score.json"), &pretty(score)?)?;
    }
    write(&base("plot.json"), &pretty(&plot_data(s))?)?;
    let log = base("events.ndjson");
    if log.exists() {
        fs::remove_file(&log)?;
    }
    append_ndjson(&log, s.events())?;
    Ok(rep)
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| path.display().to_string())
}

/// Runs every scenario and writes `summary.csv`. The exit code is the worst
/// of the individual ones.
pub fn run_batch(specs: &[RunSpec], out: &Path) -> Result<(Vec<RunReport>, i32)> {
    fs::create_dir_all(out)?;
    let mut reports = Vec::new();
    let mut code = EXIT_COMPLETED;
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record([
        "scenario",
        "status",
        "exit_code",
        "steps",
        "completed_min",
        "safety",
        "purity",
        "time",
        "energy",
        "total",
    ])?;
    for spec in specs {
        let name = spec.scenario.display().to_string();
        let rep = match run_scenario(spec) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{name}: {e:#}");
                let c = error_exit_code(&e);
                code = worst(code, c);
                w.write_record([
                    name.as_str(),
                    "error",
                    &c.to_string(),
                    "",
                    "",
                    "",
                    "",
                    "",
                    "",
                    "",
                ])?;
                continue;
            }
        };
        code = worst(code, rep.exit_code);
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let sc = rep.score.as_ref();
        w.write_record([
            rep.name.clone(),
            status_name(rep.status).into(),
            rep.exit_code.to_string(),
            rep.steps.to_string(),
            f(rep.completed_min),
            f(sc.map(|s| s.safety)),
            f(sc.map(|s| s.purity)),
            f(sc.map(|s| s.time)),
            f(sc.map(|s| s.energy)),
            f(sc.map(|s| s.total)),
        ])?;
        reports.push(rep);
    }
    w.flush()?;
    Ok((reports, code))
}

fn worst(a: i32, b: i32) -> i32 {
    let rank = |c: i32| match c {
        EXIT_COMPLETED => 0,
        EXIT_FAILURE => 1,
        EXIT_SHUTDOWN => 2,
        _ => 3,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

pub fn status_name(s: Status) -> &'static str {
    match s {
        Status::Running => "running",
        Status::Completed => "completed",
        Status::Shutdown => "shutdown",
        Status::Ended => "ended",
    }
}

/// Findings for a scenario, plant model, controller or trouble catalog.
/// The last two need the plant they are meant for.
pub fn validate_file(path: &Path, plant: Option<&Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CoreError::Json(format!("{}: {e}", path.display())))?;
    let parse = |what: &str| CoreError::Json(format!("{}: not a valid {what}", path.display()));
    let dims = || -> Result<(usize, usize)> {
        let p = plant.ok_or_else(|| {
            anyhow!(
                "{}: pass --plant to check it against a plant model",
                path.display()
            )
        })?;
        let m = ModelConfig::load(p)?;
        Ok((m.mv_tags.len(), m.cv_tags.len()))
    };
    if v.is_array() {
        let cat: Vec<TroubleSpec> =
            serde_json::from_value(v).map_err(|e| anyhow!("{}: {e}", parse("trouble catalog")))?;
        let (n_u, n_y) = dims()?;
        return Ok(validate_catalog(&cat, n_u, n_y));
    }
    if v.get("task").is_some() {
        let sc = match ScenarioConfig::load(path) {
            Ok(sc) => sc,
            Err(e) => return Ok(vec![e.to_string()]),
        };
        return Ok(sc.validate());
    }
    if v.get("local_models").is_some() {
        let m: ModelConfig =
            serde_json::from_value(v).map_err(|e| anyhow!("{}: {e}", parse("plant model")))?;
        return Ok(m.validate());
    }
    if v.get("sso").is_some() {
        let c: ControllerConfig =
            serde_json::from_value(v).map_err(|e| anyhow!("{}: {e}", parse("controller")))?;
        let (n_u, n_y) = dims()?;
        return Ok(c.validate(n_u, n_y));
    }
    Err(parse("scenario, plant model, controller or trouble catalog").into())
}

/// Rebuilds a session from its event log.
pub fn replay_log(path: &Path) -> Result<Session> {
    let events = read_ndjson(path)?;
    Ok(Session::replay(&events)?)
}

/// Plot series from an event log, as JSON or as one CSV row per step.
pub fn export_plot(log: &Path, out: &Path, format: Format) -> Result<PathBuf> {
    let s = replay_log(log)?;
    let plot = plot_data(&s);
    let stem = log
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = stem
        .strip_suffix(".ndjson")
        .unwrap_or(&stem)
        .strip_suffix(".events")
        .unwrap_or(&stem)
        .to_string();
    let stem = if stem.is_empty() {
        s.scenario().name.clone()
    } else {
        stem
    };
    fs::create_dir_all(out)?;
    let path = out.join(format!("{stem}.plot.{}", format.ext()));
    match format {
        Format::Json => write(&path, &pretty(&plot)?)?,
        Format::Csv => {
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["step".to_string(), "sim_minutes".to_string()];
            header.extend(plot.cv_tags.iter().cloned());
            header.extend(plot.mv_tags.iter().cloned());
            w.write_record(&header)?;
            for (n, step) in plot.step.iter().enumerate() {
                let mut rec = vec![step.to_string(), plot.time_min[n].to_string()];
                rec.extend(plot.cv.iter().map(|c| c[n].to_string()));
                rec.extend(plot.mv.iter().map(|m| m[n].to_string()));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
    }
    Ok(path)
}
