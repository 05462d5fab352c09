//! Shadow-operator identities: who holds each MV, the operator/machine
//! timers, and the troublemaker's catalog of corrupted controller inputs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TROUBLE_MODES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeId {
    TaskPerformer,
    CooperationPartner,
    OperationAdvisor,
    SafetySupervisor,
    Troublemaker,
}

impl ModeId {
    /// Authority holder when the mode is entered.
    pub fn initial_holder(self) -> Holder {
        match self {
            ModeId::TaskPerformer | ModeId::CooperationPartner | ModeId::Troublemaker => Holder::Machine,
            ModeId::OperationAdvisor | ModeId::SafetySupervisor => Holder::Operator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holder {
    Machine,
    Operator,
}

/// Which agent supplies each MV. A boolean per MV makes the two sets
/// complementary by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityPartition {
    machine: Vec<bool>,
    pub changed_at: u64,
}

impl AuthorityPartition {
    pub fn uniform(n_u: usize, holder: Holder, t: u64) -> Self {
        Self {
            machine: vec![holder == Holder::Machine; n_u],
            changed_at: t,
        }
    }

    pub fn n_u(&self) -> usize {
        self.machine.len()
    }

    pub fn machine_mask(&self) -> &[bool] {
        &self.machine
    }

    pub fn holder(&self, i: usize) -> Holder {
        if self.machine[i] {
            Holder::Machine
        } else {
            Holder::Operator
        }
    }

    pub fn machine_mvs(&self) -> Vec<usize> {
        (0..self.n_u()).filter(|&i| self.machine[i]).collect()
    }

    pub fn operator_mvs(&self) -> Vec<usize> {
        (0..self.n_u()).filter(|&i| !self.machine[i]).collect()
    }

    pub fn all(&self, holder: Holder) -> bool {
        self.machine.iter().all(|&m| m == (holder == Holder::Machine))
    }

    /// Returns whether anything changed.
    pub fn assign(&mut self, i: usize, holder: Holder, t: u64) -> bool {
        let m = holder == Holder::Machine;
        if self.machine[i] == m {
            return false;
        }
        self.machine[i] = m;
        self.changed_at = t;
        true
    }

    pub fn assign_all(&mut self, holder: Holder, t: u64) -> bool {
        let mut changed = false;
        for i in 0..self.n_u() {
            changed |= self.assign(i, holder, t);
        }
        changed
    }
}

/// Operator and machine stopwatches; exactly one runs at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTimer {
    pub operator_s: f64,
    pub machine_s: f64,
    pub running: Holder,
}

impl DualTimer {
    pub fn new(running: Holder) -> Self {
        Self {
            operator_s: 0.0,
            machine_s: 0.0,
            running,
        }
    }

    pub fn tick(&mut self, seconds: f64) {
        match self.running {
            Holder::Operator => self.operator_s += seconds,
            Holder::Machine => self.machine_s += seconds,
        }
    }

    /// Returns whether the running side changed.
    pub fn switch_to(&mut self, side: Holder) -> bool {
        let changed = self.running != side;
        self.running = side;
        changed
    }

    pub fn total(&self) -> f64 {
        self.operator_s + self.machine_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TroubleKind {
    /// Wrong model gains.
    GainError,
    /// Replacement MV rate limits.
    RateLimits,
    /// Offsets on the CVs the controller reads.
    MeasurementOffset,
}

/// One entry of the troublemaker catalog. Index 0 is normal operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TroubleSpec {
    pub index: usize,
    pub name: String,
    /// First plant step at which the trouble is in effect.
    #[serde(default)]
    pub activate_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deactivate_at: Option<u64>,
    /// `[cv][mv]` multipliers on the controller's model gains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_factors: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub du_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub du_max: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_offsets: Option<Vec<f64>>,
}

impl TroubleSpec {
    pub fn normal() -> Self {
        Self {
            index: 0,
            name: "normal operation".into(),
            activate_at: 0,
            deactivate_at: None,
            gain_factors: None,
            du_min: None,
            du_max: None,
            cv_offsets: None,
        }
    }

    pub fn kinds(&self) -> Vec<TroubleKind> {
        let mut k = Vec::new();
        if self.gain_factors.is_some() {
            k.push(TroubleKind::GainError);
        }
        if self.du_min.is_some() || self.du_max.is_some() {
            k.push(TroubleKind::RateLimits);
        }
        if self.cv_offsets.is_some() {
            k.push(TroubleKind::MeasurementOffset);
        }
        k
    }

    pub fn is_active(&self, t: u64) -> bool {
        !self.kinds().is_empty() && t >= self.activate_at && self.deactivate_at.is_none_or(|d| t < d)
    }

    pub fn validate(&self, n_u: usize, n_y: usize) -> Vec<String> {
        let mut f = Vec::new();
        let p = format!("trouble {}", self.index);
        if self.index >= TROUBLE_MODES {
            f.push(format!("{p}: index must be below {TROUBLE_MODES}"));
        }
        if self.index == 0 && !self.kinds().is_empty() {
            f.push(format!("{p}: index 0 is normal operation and must not perturb anything"));
        }
        if let Some(g) = &self.gain_factors {
            if g.len() != n_y || g.iter().any(|r| r.len() != n_u) {
                f.push(format!("{p}: gain_factors must be {n_y}x{n_u}"));
            }
            if g.iter().flatten().any(|v| !v.is_finite()) {
                f.push(format!("{p}: gain_factors must be finite"));
            }
        }
        for (name, v) in [("du_min", &self.du_min), ("du_max", &self.du_max)] {
            if let Some(v) = v {
                if v.len() != n_u {
                    f.push(format!("{p}: {name} needs {n_u} entries"));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (&self.du_min, &self.du_max) {
            if lo.iter().zip(hi).any(|(a, b)| a > b || *a > 0.0 || *b < 0.0) {
                f.push(format!("{p}: rate limits must satisfy du_min <= 0 <= du_max"));
            }
        }
        if let Some(o) = &self.cv_offsets {
            if o.len() != n_y {
                f.push(format!("{p}: cv_offsets needs {n_y} entries"));
            }
        }
        if let Some(d) = self.deactivate_at {
            if d <= self.activate_at {
                f.push(format!("{p}: deactivate_at must follow activate_at"));
            }
        }
        f
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Vec<TroubleSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Json(format!("{}: {e}", path.display())))
}

/// Findings for a full ten-mode catalog.
pub fn validate_catalog(catalog: &[TroubleSpec], n_u: usize, n_y: usize) -> Vec<String> {
    let mut f = Vec::new();
    if catalog.len() != TROUBLE_MODES {
        f.push(format!("trouble catalog has {} entries, expected {TROUBLE_MODES}", catalog.len()));
    }
    for (pos, spec) in catalog.iter().enumerate() {
        if spec.index != pos {
            f.push(format!("trouble catalog entry {pos} carries index {}", spec.index));
        }
        f.extend(spec.validate(n_u, n_y));
    }
    f
}

/// Hidden trouble mode for a session, uniform over `0..10`.
pub fn troublemaker_arm(seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).gen_range(0..TROUBLE_MODES)
}

/// What the controller is given each period.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerInputs {
    pub measured: Vec<f64>,
    pub du_min: Vec<f64>,
    pub du_max: Vec<f64>,
    pub gain_factors: Option<Vec<Vec<f64>>>,
}

/// Corrupts the controller's inputs with `spec` if it is active at `t`.
/// The true plant state is never involved.
pub fn apply_trouble(spec: &TroubleSpec, t: u64, inputs: ControllerInputs) -> ControllerInputs {
    if !spec.is_active(t) {
        return inputs;
    }
    let mut out = inputs;
    if let Some(g) = &spec.gain_factors {
        out.gain_factors = Some(g.clone());
    }
    if let Some(v) = &spec.du_min {
        out.du_min = v.clone();
    }
    if let Some(v) = &spec.du_max {
        out.du_max = v.clone();
    }
    if let Some(o) = &spec.cv_offsets {
        for (m, d) in out.measured.iter_mut().zip(o) {
            *m += d;
        }
    }
    out
}
