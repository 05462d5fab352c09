//! Event-sourced training session.
//!
//! All mutation goes through [`Session::advance`] and [`Session::submit`];
//! both append to the event log, and [`Session::replay`] rebuilds an
//! identical session from that log alone.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::impc::{settle_at, DecisionRecord, Demand, EngineState, ImpcEngine, StepRequest};
use crate::plant::{safety_check, Plant, PlantState, SafetyStatus};
use crate::scenario::{ScenarioConfig, SCHEMA_VERSION};
use crate::scoring::{score, ScoreBreakdown, ScoreEvent, ScoreInput};
use crate::trace::TraceRow;
use crate::training::{
    apply_trouble, troublemaker_arm, AuthorityPartition, ControllerInputs, DualTimer, Holder, ModeId, TroubleKind,
    TroubleSpec,
};

pub const SNAPSHOT_EVERY: usize = 100;
pub const MAX_LOOKAHEAD: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Completed,
    Shutdown,
    /// Step limit reached.
    Ended,
}

/// Everything that changes while a session runs. Rewind and snapshots
/// restore exactly this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Core {
    pub plant: PlantState,
    pub engine: EngineState,
    pub mode: ModeId,
    pub partition: AuthorityPartition,
    pub timer: DualTimer,
    /// Latched operator set values; machine-held entries track the plant.
    pub operator_mv: Vec<f64>,
    pub safety: SafetyStatus,
    pub status: Status,
    /// Hidden troublemaker choice, drawn on first entry to the mode.
    pub trouble: Option<usize>,
    pub trouble_announced: bool,
    pub deprived_at: Option<u64>,
    pub detection_latency_s: Option<f64>,
    pub band_steps: u32,
    pub completed_at: Option<u64>,
    /// Plant seconds run by the machine while advising or supervising.
    pub excluded_s: f64,
    /// Machine seconds spent on advisor deductions, outside plant time.
    pub advisor_s: f64,
    /// Step at which the current demonstration began.
    pub demo_start: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    pub t: u64,
    pub lookahead: usize,
    pub current_mv: Vec<f64>,
    /// `[step][mv]`
    pub mv: Vec<Vec<f64>>,
    /// Plant CVs along the deduction, `[step][cv]`.
    pub cv: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
    pub state_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Command {
    MvSet {
        mv: String,
        value: f64,
    },
    ModeChange {
        mode: ModeId,
    },
    HelpRequest {
        #[serde(alias = "l3")]
        lookahead: usize,
    },
    #[serde(alias = "set_authority")]
    AuthorityTransfer {
        /// One MV by tag; absent means all of them.
        #[serde(default)]
        mv: Option<String>,
        to: Holder,
    },
    Deprive,
    Rewind {
        steps: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    SessionCreated {
        id: String,
        config: Box<ScenarioConfig>,
        state_hash: String,
    },
    ModeChange {
        from: ModeId,
        to: ModeId,
        machine_mvs: Vec<String>,
    },
    AuthorityTransfer {
        mv: Option<String>,
        to: Holder,
        machine_mvs: Vec<String>,
    },
    MvSet {
        mv: String,
        value: f64,
    },
    HelpRequest {
        lookahead: usize,
    },
    Advice(Box<Advice>),
    AuthorityDeprived {
        detection_latency_s: Option<f64>,
        early: bool,
    },
    Rewind {
        steps: u64,
        to_t: u64,
    },
    TroubleInjected {
        index: usize,
        name: String,
        kinds: Vec<TroubleKind>,
    },
    Decision(Box<DecisionRecord>),
    ControllerFault {
        message: String,
    },
    Step(TraceRow),
    Alarm {
        cv: String,
        value: f64,
    },
    Shutdown {
        cv: String,
        value: f64,
    },
    TaskComplete {
        duration_min: f64,
    },
    SessionEnded {
        status: Status,
    },
    Rejected {
        command: Command,
        reason: String,
    },
    Warning {
        message: String,
    },
}

impl EventBody {
    pub fn tag(&self) -> &'static str {
        match self {
            EventBody::SessionCreated { .. } => "session_created",
            EventBody::ModeChange { .. } => "mode_change",
            EventBody::AuthorityTransfer { .. } => "authority_transfer",
            EventBody::MvSet { .. } => "mv_set",
            EventBody::HelpRequest { .. } => "help_request",
            EventBody::Advice(_) => "advice",
            EventBody::AuthorityDeprived { .. } => "authority_deprived",
            EventBody::Rewind { .. } => "rewind",
            EventBody::TroubleInjected { .. } => "trouble_injected",
            EventBody::Decision(_) => "decision",
            EventBody::ControllerFault { .. } => "controller_fault",
            EventBody::Step(_) => "step",
            EventBody::Alarm { .. } => "alarm",
            EventBody::Shutdown { .. } => "shutdown",
            EventBody::TaskComplete { .. } => "task_complete",
            EventBody::SessionEnded { .. } => "session_ended",
            EventBody::Rejected { .. } => "rejected",
            EventBody::Warning { .. } => "warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub schema_version: u32,
    pub seq: u64,
    /// Plant step when the event was appended.
    pub t: u64,
    pub time_min: f64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub schema_version: u32,
    pub id: String,
    pub name: String,
    pub t: u64,
    pub time_min: f64,
    pub mode: ModeId,
    pub status: Status,
    pub cv_tags: Vec<String>,
    pub mv_tags: Vec<String>,
    pub cv: Vec<f64>,
    pub mv: Vec<f64>,
    pub cv_min: Vec<f64>,
    pub cv_max: Vec<f64>,
    pub mv_min: Vec<f64>,
    pub mv_max: Vec<f64>,
    pub machine_mvs: Vec<String>,
    pub operator_mvs: Vec<String>,
    pub timer: DualTimer,
    pub safety: SafetyStatus,
    pub completed_at: Option<u64>,
    pub next_seq: u64,
    pub state_hash: String,
}

#[derive(Debug, Clone, Default)]
pub struct CommandOutcome {
    pub events: Vec<Event>,
    pub advice: Option<Advice>,
}

/// Resume point written every [`SNAPSHOT_EVERY`] events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    /// Number of log events the snapshot covers.
    pub events: usize,
    pub core: Core,
    pub history: Vec<Core>,
    pub trace: Vec<TraceRow>,
}

struct StepResult {
    trouble_started: Option<usize>,
    decision: Option<DecisionRecord>,
    fault: Option<String>,
    row: TraceRow,
    new_alarm: bool,
    new_shutdown: bool,
    completed: bool,
}

/// Immutable per-session context shared by the live session and forks.
#[derive(Debug, Clone)]
struct Context {
    scenario: ScenarioConfig,
    plant: Plant,
    catalog: Vec<TroubleSpec>,
    y_min: Vec<f64>,
    y_max: Vec<f64>,
}

impl Context {
    fn active_trouble(&self, core: &Core) -> Option<&TroubleSpec> {
        if core.mode != ModeId::Troublemaker {
            return None;
        }
        core.trouble.filter(|&i| i > 0).and_then(|i| self.catalog.get(i))
    }

    fn in_band(&self, cv: &[f64]) -> bool {
        let wk = self.plant.model.working_point_cv;
        let band = &self.scenario.completion;
        if (cv[wk] - self.scenario.task.w_to).abs() > band.tolerance {
            return false;
        }
        cv.iter().enumerate().all(|(k, &y)| {
            let (lo, hi) = (self.y_min[k], self.y_max[k]);
            let eps = 1e-6 * if (hi - lo).is_finite() { (hi - lo).max(1.0) } else { 1.0 };
            y >= lo - eps && y <= hi + eps
        })
    }

    /// One control period. With `fork` set, completion and the step limit
    /// are not tracked.
    fn step(&self, engine: &mut ImpcEngine, core: &mut Core, fork: bool) -> Result<StepResult> {
        let plant = &self.plant;
        let t = core.plant.t;
        let mask = core.partition.machine_mask().to_vec();
        let ctl = &engine.config;
        let mut inputs = ControllerInputs {
            measured: core.plant.cv.clone(),
            du_min: ctl.ndpc.du_min.clone(),
            du_max: ctl.ndpc.du_max.clone(),
            gain_factors: None,
        };
        let mut trouble_started = None;
        if let Some(spec) = self.active_trouble(core) {
            if spec.is_active(t) {
                inputs = apply_trouble(spec, t, inputs);
                if !core.trouble_announced {
                    core.trouble_announced = true;
                    trouble_started = Some(spec.index);
                }
            }
        }
        engine.set_gain_factors(inputs.gain_factors.clone())?;
        std::mem::swap(&mut engine.state, &mut core.engine);

        let mut u = core.operator_mv.clone();
        let mut decision = None;
        let mut fault = None;
        if mask.iter().any(|&m| m) {
            let wk = plant.model.working_point_cv;
            let w_to = self.scenario.task.w_to;
            let req = StepRequest {
                t,
                measured: &inputs.measured,
                u_prev: &core.plant.mv,
                demand: Some(Demand { cv: wk, min: w_to, max: w_to }),
                machine_mvs: Some(&mask),
                rate_limits: Some((&inputs.du_min, &inputs.du_max)),
            };
            match engine.impc_step(&req) {
                Ok(rec) => {
                    for i in (0..u.len()).filter(|&i| mask[i]) {
                        u[i] = rec.applied[i].clamp(plant.mv_min[i], plant.mv_max[i]);
                    }
                    decision = Some(rec);
                }
                Err(e) => {
                    for i in (0..u.len()).filter(|&i| mask[i]) {
                        u[i] = core.plant.mv[i];
                    }
                    fault = Some(e.to_string());
                }
            }
        }
        engine.commit(core.plant.w, &u, decision.as_ref().map(|d| &d.plan));
        std::mem::swap(&mut engine.state, &mut core.engine);

        plant.step(&mut core.plant, &u, &self.scenario.disturbance)?;
        core.operator_mv = u.clone();
        let secs = plant.period_min * 60.0;
        core.timer.tick(secs);
        if matches!(core.mode, ModeId::OperationAdvisor | ModeId::SafetySupervisor) && core.timer.running == Holder::Machine {
            core.excluded_s += secs;
        }
        let before = core.safety.clone();
        core.safety = safety_check(&core.plant.cv, &before, &self.scenario.safety, core.plant.t);
        let new_alarm = core.safety.alarm && !before.alarm;
        let new_shutdown = core.safety.shutdown && !before.shutdown;
        let now = core.plant.t;
        let row = TraceRow {
            t: now,
            time_min: now as f64 * plant.period_min,
            cv: core.plant.cv.clone(),
            measured: inputs.measured,
            mv: u,
            machine: mask,
            alarm: core.safety.alarm,
            shutdown: core.safety.shutdown,
        };

        let mut completed = false;
        if !fork {
            if self.scenario.complete_on_band && core.completed_at.is_none() {
                if self.in_band(&core.plant.cv) {
                    core.band_steps += 1;
                } else {
                    core.band_steps = 0;
                }
                if core.band_steps >= self.scenario.completion.hold_steps {
                    core.completed_at = Some(now);
                    core.status = Status::Completed;
                    completed = true;
                }
            }
            if core.safety.shutdown {
                core.status = Status::Shutdown;
            } else if core.status == Status::Running && now >= self.scenario.max_steps {
                core.status = Status::Ended;
            }
        }
        Ok(StepResult {
            trouble_started,
            decision,
            fault,
            row,
            new_alarm,
            new_shutdown,
            completed,
        })
    }
}

pub struct Session {
    id: String,
    ctx: Context,
    engine: ImpcEngine,
    core: Core,
    history: Vec<Core>,
    trace: Vec<TraceRow>,
    events: Vec<Event>,
    baseline: Option<Vec<f64>>,
}

fn hash_json<T: Serialize>(v: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("state serializes")))
}

impl Session {
    /// New session at the `w_from` equilibrium. `scenario` must already be
    /// resolved.
    pub fn create(id: impl Into<String>, scenario: ScenarioConfig) -> Result<Self> {
        let findings = scenario.validate();
        if !findings.is_empty() {
            return Err(Error::Validation(findings));
        }
        let plant = Plant::from_config(scenario.plant_config()?)?;
        let ctl = scenario.controller_config()?.clone();
        let (u0, state) = settle_at(&plant, &ctl, scenario.task.w_from)?;
        let engine = ImpcEngine::new(plant.model.clone(), plant.base.clone(), ctl.clone(), plant.period_min, &u0, state.w)?;
        let mode = scenario.mode;
        let holder = mode.initial_holder();
        let core = Core {
            engine: engine.state.clone(),
            mode,
            partition: AuthorityPartition::uniform(plant.n_u(), holder, 0),
            timer: DualTimer::new(holder),
            operator_mv: u0,
            safety: SafetyStatus::default(),
            status: Status::Running,
            trouble: (mode == ModeId::Troublemaker).then(|| scenario.trouble_index.unwrap_or_else(|| troublemaker_arm(scenario.seed))),
            trouble_announced: false,
            deprived_at: None,
            detection_latency_s: None,
            band_steps: 0,
            completed_at: None,
            excluded_s: 0.0,
            advisor_s: 0.0,
            demo_start: 0,
            plant: state,
        };
        let ctx = Context {
            catalog: scenario.catalog()?,
            y_min: ctl.sso.y_min.clone(),
            y_max: ctl.sso.y_max.clone(),
            scenario,
            plant,
        };
        let mut s = Self {
            id: id.into(),
            ctx,
            engine,
            core,
            history: Vec::new(),
            trace: Vec::new(),
            events: Vec::new(),
            baseline: None,
        };
        let state_hash = s.state_hash();
        s.push(EventBody::SessionCreated {
            id: s.id.clone(),
            config: Box::new(s.ctx.scenario.clone()),
            state_hash,
        });
        let sc = &s.ctx.scenario;
        if sc.complete_on_band && sc.task.w_from == sc.task.w_to && s.ctx.in_band(&s.core.plant.cv) {
            s.core.completed_at = Some(0);
            s.core.status = Status::Completed;
            s.push(EventBody::TaskComplete { duration_min: 0.0 });
            s.push(EventBody::SessionEnded { status: Status::Completed });
        }
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.ctx.scenario
    }

    pub fn plant(&self) -> &Plant {
        &self.ctx.plant
    }

    pub fn core(&self) -> &Core {
        &self.core
    }

    pub fn status(&self) -> Status {
        self.core.status
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn events_from(&self, seq: u64) -> &[Event] {
        &self.events[(seq as usize).min(self.events.len())..]
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// SHA-256 over the full mutable state.
    pub fn state_hash(&self) -> String {
        hash_json(&self.core)
    }

    fn time_min(&self) -> f64 {
        self.core.plant.t as f64 * self.ctx.plant.period_min
    }

    fn push(&mut self, body: EventBody) -> Event {
        let e = Event {
            schema_version: SCHEMA_VERSION,
            seq: self.events.len() as u64,
            t: self.core.plant.t,
            time_min: self.time_min(),
            body,
        };
        self.events.push(e.clone());
        e
    }

    fn tags(&self, mvs: &[usize]) -> Vec<String> {
        mvs.iter().map(|&i| self.ctx.plant.model.mv_tags[i].clone()).collect()
    }

    pub fn summary(&self) -> StateSummary {
        let p = &self.ctx.plant;
        StateSummary {
            schema_version: SCHEMA_VERSION,
            id: self.id.clone(),
            name: self.ctx.scenario.name.clone(),
            t: self.core.plant.t,
            time_min: self.time_min(),
            mode: self.core.mode,
            status: self.core.status,
            cv_tags: p.model.cv_tags.clone(),
            mv_tags: p.model.mv_tags.clone(),
            cv: self.core.plant.cv.clone(),
            mv: self.core.operator_mv.clone(),
            cv_min: self.ctx.y_min.clone(),
            cv_max: self.ctx.y_max.clone(),
            mv_min: p.mv_min.clone(),
            mv_max: p.mv_max.clone(),
            machine_mvs: self.tags(&self.core.partition.machine_mvs()),
            operator_mvs: self.tags(&self.core.partition.operator_mvs()),
            timer: self.core.timer.clone(),
            safety: self.core.safety.clone(),
            completed_at: self.core.completed_at,
            next_seq: self.events.len() as u64,
            state_hash: self.state_hash(),
        }
    }

    fn ensure_running(&self) -> Result<()> {
        match self.core.status {
            Status::Running => Ok(()),
            Status::Shutdown => Err(Error::ShutDown),
            s => Err(Error::Rejected(format!("session has ended ({})", serde_json::to_string(&s).unwrap_or_default()))),
        }
    }

    /// Runs up to `n` control periods, stopping early when the session ends.
    pub fn advance(&mut self, n: u64) -> Result<Vec<Event>> {
        self.ensure_running()?;
        let first = self.events.len();
        for _ in 0..n {
            if self.core.status != Status::Running {
                break;
            }
            self.step_once()?;
        }
        Ok(self.events[first..].to_vec())
    }

    fn step_once(&mut self) -> Result<()> {
        if self.core.mode == ModeId::TaskPerformer {
            self.history.push(self.core.clone());
        }
        let r = self.ctx.step(&mut self.engine, &mut self.core, false)?;
        if let Some(index) = r.trouble_started {
            let spec = &self.ctx.catalog[index];
            let (name, kinds) = (spec.name.clone(), spec.kinds());
            self.push(EventBody::TroubleInjected { index, name, kinds });
        }
        if let Some(d) = r.decision {
            self.push(EventBody::Decision(Box::new(d)));
        }
        if let Some(message) = r.fault {
            self.push(EventBody::ControllerFault { message });
        }
        let sc = self.ctx.scenario.safety.clone();
        let cv_tag = self.ctx.plant.model.cv_tags[sc.cv].clone();
        let value = r.row.cv[sc.cv];
        self.trace.push(r.row.clone());
        self.push(EventBody::Step(r.row));
        if r.new_alarm {
            self.push(EventBody::Alarm { cv: cv_tag.clone(), value });
        }
        if r.new_shutdown {
            self.push(EventBody::Shutdown { cv: cv_tag, value });
        }
        if r.completed {
            self.push(EventBody::TaskComplete { duration_min: self.time_min() });
        }
        if self.core.status != Status::Running {
            self.push(EventBody::SessionEnded { status: self.core.status });
        }
        Ok(())
    }

    fn reject(&mut self, command: Command, reason: String) -> Error {
        self.push(EventBody::Rejected { command, reason: reason.clone() });
        Error::Rejected(reason)
    }

    fn mv_index(&self, tag: &str) -> Option<usize> {
        self.ctx.plant.model.mv_index(tag)
    }

    /// Applies one operator command. Rejections are logged and returned as
    /// [`Error::Rejected`].
    pub fn submit(&mut self, cmd: Command) -> Result<CommandOutcome> {
        let first = self.events.len();
        let mut advice = None;
        if !matches!(cmd, Command::Rewind { .. }) && self.core.status != Status::Running {
            let reason = match self.core.status {
                Status::Shutdown => "plant is shut down".to_string(),
                _ => "session has ended".to_string(),
            };
            return Err(self.reject(cmd, reason));
        }
        let t = self.core.plant.t;
        match cmd.clone() {
            Command::MvSet { mv, value } => {
                let Some(i) = self.mv_index(&mv) else {
                    return Err(self.reject(cmd, format!("unknown MV {mv}")));
                };
                if self.core.partition.holder(i) != Holder::Operator {
                    return Err(self.reject(cmd, format!("{mv} is held by the machine")));
                }
                let (lo, hi) = (self.ctx.plant.mv_min[i], self.ctx.plant.mv_max[i]);
                if !(lo..=hi).contains(&value) {
                    return Err(self.reject(cmd, format!("{mv} = {value} lies outside [{lo}, {hi}]")));
                }
                self.core.operator_mv[i] = value;
                self.push(EventBody::MvSet { mv, value });
            }
            Command::ModeChange { mode } => {
                let from = self.core.mode;
                if mode == from {
                    self.push(EventBody::Warning { message: format!("already in {mode:?} mode") });
                } else {
                    let holder = mode.initial_holder();
                    self.core.mode = mode;
                    self.core.partition.assign_all(holder, t);
                    self.core.timer.switch_to(holder);
                    if mode == ModeId::TaskPerformer {
                        self.history.clear();
                        self.core.demo_start = t;
                    }
                    if mode == ModeId::Troublemaker && self.core.trouble.is_none() {
                        let sc = &self.ctx.scenario;
                        self.core.trouble = Some(sc.trouble_index.unwrap_or_else(|| troublemaker_arm(sc.seed)));
                    }
                    let machine_mvs = self.tags(&self.core.partition.machine_mvs());
                    self.push(EventBody::ModeChange { from, to: mode, machine_mvs });
                }
            }
            Command::HelpRequest { lookahead } => {
                if self.core.mode != ModeId::OperationAdvisor {
                    return Err(self.reject(cmd, "help is only available in operation advisor mode".into()));
                }
                if lookahead == 0 || lookahead > MAX_LOOKAHEAD {
                    return Err(self.reject(cmd, format!("lookahead must lie in 1..={MAX_LOOKAHEAD}")));
                }
                self.push(EventBody::HelpRequest { lookahead });
                let a = self.deduce(lookahead)?;
                let secs = lookahead as f64 * self.ctx.plant.period_min * 60.0;
                let back = self.core.timer.running;
                self.core.timer.switch_to(Holder::Machine);
                self.core.timer.tick(secs);
                self.core.timer.switch_to(back);
                self.core.advisor_s += secs;
                self.push(EventBody::Advice(Box::new(a.clone())));
                advice = Some(a);
            }
            Command::AuthorityTransfer { ref mv, to } => {
                let partner = self.core.mode == ModeId::CooperationPartner;
                let supervisor = self.core.mode == ModeId::SafetySupervisor;
                if !partner && !supervisor {
                    return Err(self.reject(cmd, "authority transfers need partner or supervisor mode".into()));
                }
                let changed = match mv {
                    Some(tag) => {
                        if supervisor {
                            return Err(self.reject(cmd, "the supervisor swaps all MVs at once".into()));
                        }
                        let Some(i) = self.mv_index(tag) else {
                            return Err(self.reject(cmd, format!("unknown MV {tag}")));
                        };
                        self.core.partition.assign(i, to, t)
                    }
                    None => self.core.partition.assign_all(to, t),
                };
                if !changed {
                    self.push(EventBody::Warning { message: format!("authority already with the {to:?}").to_lowercase() });
                } else {
                    if supervisor {
                        self.core.timer.switch_to(to);
                    }
                    let machine_mvs = self.tags(&self.core.partition.machine_mvs());
                    self.push(EventBody::AuthorityTransfer { mv: mv.clone(), to, machine_mvs });
                }
            }
            Command::Deprive => {
                if self.core.mode != ModeId::Troublemaker {
                    return Err(self.reject(cmd, "deprive is only available in troublemaker mode".into()));
                }
                if self.core.partition.all(Holder::Operator) {
                    return Err(self.reject(cmd, "the machine holds no authority".into()));
                }
                self.core.partition.assign_all(Holder::Operator, t);
                self.core.timer.switch_to(Holder::Operator);
                self.core.deprived_at = Some(t);
                let spec = self.ctx.active_trouble(&self.core);
                let period_s = self.ctx.plant.period_min * 60.0;
                let latency = spec.map(|s| (t as f64 - s.activate_at as f64) * period_s);
                self.core.detection_latency_s = latency;
                self.push(EventBody::AuthorityDeprived {
                    detection_latency_s: latency,
                    early: latency.is_none_or(|l| l < 0.0),
                });
            }
            Command::Rewind { steps } => {
                if self.core.mode != ModeId::TaskPerformer {
                    return Err(self.reject(cmd, "rewind is only available in task performer mode".into()));
                }
                let elapsed = self.history.len() as u64;
                if steps > elapsed {
                    return Err(self.reject(cmd, format!("cannot rewind {steps} steps, only {elapsed} recorded")));
                }
                if steps > 0 {
                    let keep = (elapsed - steps) as usize;
                    self.core = self.history[keep].clone();
                    self.history.truncate(keep);
                    self.trace.truncate(self.core.plant.t as usize);
                }
                let to_t = self.core.plant.t;
                self.push(EventBody::Rewind { steps, to_t });
            }
        }
        Ok(CommandOutcome {
            events: self.events[first..].to_vec(),
            advice,
        })
    }

    /// Runs the controller on a private copy for `lookahead` steps with
    /// full machine authority. The live session is untouched.
    pub fn deduce(&self, lookahead: usize) -> Result<Advice> {
        let state_hash = self.state_hash();
        let mut engine = self.engine.clone();
        let mut core = self.core.clone();
        core.partition.assign_all(Holder::Machine, core.plant.t);
        let mut mv = Vec::with_capacity(lookahead);
        let mut cv = Vec::with_capacity(lookahead);
        let mut warnings = Vec::new();
        for _ in 0..lookahead {
            let r = self.ctx.step(&mut engine, &mut core, true)?;
            if let Some(f) = r.fault {
                warnings.push(format!("controller fault at step {}: {f}", r.row.t));
            }
            if r.new_alarm {
                warnings.push(format!("safety alarm at step {}", r.row.t));
            }
            mv.push(r.row.mv);
            cv.push(r.row.cv);
            if r.new_shutdown {
                warnings.push(format!("shutdown at step {}", core.plant.t));
                break;
            }
        }
        Ok(Advice {
            t: self.core.plant.t,
            lookahead,
            current_mv: self.core.plant.mv.clone(),
            mv,
            cv,
            warnings,
            state_hash,
        })
    }

    /// Machine profile of the energy MV on this task, from an untroubled
    /// task-performer run of the same scenario.
    fn baseline(&mut self) -> Result<Vec<f64>> {
        if let Some(b) = &self.baseline {
            return Ok(b.clone());
        }
        let mut sc = self.ctx.scenario.clone();
        sc.mode = ModeId::TaskPerformer;
        sc.trouble_index = None;
        let mut run = Session::create("baseline", sc)?;
        while run.status() == Status::Running {
            run.advance(self.ctx.scenario.max_steps)?;
        }
        let m = self.ctx.scenario.scoring.energy_mv;
        let mut b: Vec<f64> = run.trace.iter().map(|r| r.mv[m]).collect();
        if b.is_empty() {
            b.push(run.core.plant.mv[m]);
        }
        self.baseline = Some(b.clone());
        Ok(b)
    }

    pub fn score(&mut self) -> Result<ScoreBreakdown> {
        if self.core.status == Status::Running {
            return Err(Error::IncompleteTrace("session is still running".into()));
        }
        let baseline = self.baseline()?;
        let sc = &self.ctx.scenario;
        let period = self.ctx.plant.period_min;
        let timed_minutes = if sc.complete_on_band {
            Some(match self.core.completed_at {
                Some(t) => t as f64 * period - self.core.excluded_s / 60.0,
                None => f64::INFINITY,
            })
        } else {
            None
        };
        let events = self
            .events
            .iter()
            .filter(|e| {
                matches!(
                    e.body,
                    EventBody::Alarm { .. }
                        | EventBody::Shutdown { .. }
                        | EventBody::TaskComplete { .. }
                        | EventBody::TroubleInjected { .. }
                        | EventBody::AuthorityDeprived { .. }
                )
            })
            .map(|e| ScoreEvent { t: e.t, kind: e.body.tag().into() })
            .collect();
        let input = ScoreInput {
            period_min: period,
            timed_minutes,
            baseline: &baseline,
            detection_latency_s: self.core.detection_latency_s,
            events,
        };
        score(&self.trace, &sc.scoring, &input)
    }

    /// Rebuilds a session from its log.
    pub fn replay(events: &[Event]) -> Result<Self> {
        Self::resume(events, None)
    }

    /// Rebuilds a session from a snapshot plus the log events after it.
    pub fn resume(events: &[Event], snapshot: Option<Snapshot>) -> Result<Self> {
        let Some(Event { body: EventBody::SessionCreated { id, config, .. }, .. }) = events.first() else {
            return Err(Error::Config("log does not start with session_created".into()));
        };
        let mut s = Self::create(id.clone(), (**config).clone())?;
        let mut from = 1;
        if let Some(snap) = snapshot {
            if snap.events > events.len() || snap.events == 0 {
                return Err(Error::Config("snapshot lies beyond the log".into()));
            }
            s.core = snap.core;
            s.history = snap.history;
            s.trace = snap.trace;
            s.events = events[..snap.events].to_vec();
            from = snap.events;
        }
        for e in &events[from..] {
            s.apply_logged(e)?;
        }
        if s.events.len() != events.len() {
            return Err(Error::Config(format!(
                "replay produced {} events, the log has {}",
                s.events.len(),
                events.len()
            )));
        }
        Ok(s)
    }

    fn apply_logged(&mut self, e: &Event) -> Result<()> {
        let cmd = match &e.body {
            EventBody::Step(_) => return self.step_once(),
            EventBody::ModeChange { to, .. } => Command::ModeChange { mode: *to },
            EventBody::AuthorityTransfer { mv, to, .. } => Command::AuthorityTransfer { mv: mv.clone(), to: *to },
            EventBody::MvSet { mv, value } => Command::MvSet { mv: mv.clone(), value: *value },
            EventBody::HelpRequest { lookahead } => Command::HelpRequest { lookahead: *lookahead },
            EventBody::AuthorityDeprived { .. } => Command::Deprive,
            EventBody::Rewind { steps, .. } => Command::Rewind { steps: *steps },
            // state-neutral, re-logged verbatim
            EventBody::Rejected { .. } | EventBody::Warning { .. } => {
                self.push(e.body.clone());
                return Ok(());
            }
            _ => return Ok(()),
        };
        self.submit(cmd).map(|_| ())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            schema_version: SCHEMA_VERSION,
            events: self.events.len(),
            core: self.core.clone(),
            history: self.history.clone(),
            trace: self.trace.clone(),
        }
    }
}

/// Append-only NDJSON logs and latest snapshots, one pair of files per
/// session.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.ndjson"))
    }

    pub fn snapshot_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.snapshot.json"))
    }

    /// Appends `events` and refreshes the snapshot when a multiple of
    /// [`SNAPSHOT_EVERY`] was crossed.
    pub fn persist(&self, session: &Session, events: &[Event]) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        append_ndjson(&self.log_path(session.id()), events)?;
        let total = session.events().len();
        if total / SNAPSHOT_EVERY > (total - events.len()) / SNAPSHOT_EVERY {
            let path = self.snapshot_path(session.id());
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, serde_json::to_vec(&session.snapshot())?).map_err(|e| Error::Io(e.to_string()))?;
            std::fs::rename(&tmp, &path).map_err(|e| Error::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Session> {
        let events = read_ndjson(self.log_path(id))?;
        let snap = match std::fs::read(self.snapshot_path(id)) {
            Ok(bytes) => Some(serde_json::from_slice(&bytes)?),
            Err(_) => None,
        };
        Session::resume(&events, snap)
    }

    /// Ids of every stored session.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.dir).map_err(|e| Error::Io(e.to_string()))? {
            let name = entry.map_err(|e| Error::Io(e.to_string()))?.file_name();
            if let Some(id) = name.to_string_lossy().strip_suffix(".ndjson") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

pub fn append_ndjson(path: impl AsRef<Path>, events: &[Event]) -> Result<()> {
    let path = path.as_ref();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut buf = Vec::new();
    for e in events {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    f.write_all(&buf).map_err(|e| Error::Io(e.to_string()))
}

pub fn read_ndjson(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Event = serde_json::from_str(&line).map_err(|e| Error::Json(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if e.seq != out.len() as u64 {
            return Err(Error::Json(format!("{}:{}: sequence gap", path.display(), n + 1)));
        }
        out.push(e);
    }
    Ok(out)
}
