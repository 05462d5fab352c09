//! Scenario files: which plant, controller and trouble catalog to use, the
//! load-change task, seed, clock and scoring settings.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::impc::ControllerConfig;
use crate::plant::{DisturbanceModel, SafetyConfig};
use crate::scoring::ScoringConfig;
use crate::training::{validate_catalog, ModeId, TroubleSpec, TROUBLE_MODES};

pub const SCHEMA_VERSION: u32 = 1;

/// A config given either inline or as a path relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(String),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Source<T> {
    fn resolve(&self, dir: &Path) -> Result<T> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::Path(p) => {
                let path: PathBuf = dir.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Json(format!("{}: {e}", path.display())))
            }
        }
    }

    /// The inline value; paths must have been resolved first.
    pub fn inline(&self) -> Result<&T> {
        match self {
            Source::Inline(v) => Ok(v),
            Source::Path(p) => Err(Error::Config(format!("unresolved reference {p}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub w_from: f64,
    pub w_to: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionBand {
    /// Allowed distance of the working-point CV from `w_to`.
    pub tolerance: f64,
    /// Consecutive steps the band must hold.
    pub hold_steps: u32,
}

impl Default for CompletionBand {
    fn default() -> Self {
        Self {
            tolerance: 50.0,
            hold_steps: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Manual,
    RealTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockConfig {
    pub mode: ClockMode,
    /// Simulated seconds per wall second in real-time mode.
    pub speed: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            mode: ClockMode::Manual,
            speed: 10.0,
        }
    }
}

fn default_safety() -> SafetyConfig {
    SafetyConfig {
        cv: 6,
        alarm_below: 97.0,
        shutdown_below: 92.0,
    }
}

fn default_max_steps() -> u64 {
    120
}

fn yes() -> bool {
    true
}

fn default_mode() -> ModeId {
    ModeId::TaskPerformer
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub plant: Source<ModelConfig>,
    pub controller: Source<ControllerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trouble_catalog: Option<Source<Vec<TroubleSpec>>>,
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: ModeId,
    /// Session ends unfinished after this many steps.
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    /// Whether reaching the completion band ends the session.
    #[serde(default = "yes")]
    pub complete_on_band: bool,
    #[serde(default)]
    pub completion: CompletionBand,
    /// Forces the troublemaker's choice instead of drawing it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trouble_index: Option<usize>,
    #[serde(default = "default_safety")]
    pub safety: SafetyConfig,
    #[serde(default)]
    pub disturbance: DisturbanceModel,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
}

impl ScenarioConfig {
    /// Reads a scenario and inlines every referenced file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let raw: Self = serde_json::from_str(&text).map_err(|e| Error::Json(format!("{}: {e}", path.display())))?;
        raw.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, dir: &Path) -> Result<Self> {
        let mut out = self.clone();
        out.plant = Source::Inline(self.plant.resolve(dir)?);
        out.controller = Source::Inline(self.controller.resolve(dir)?);
        out.trouble_catalog = match &self.trouble_catalog {
            Some(c) => Some(Source::Inline(c.resolve(dir)?)),
            None => None,
        };
        Ok(out)
    }

    pub fn plant_config(&self) -> Result<&ModelConfig> {
        self.plant.inline()
    }

    pub fn controller_config(&self) -> Result<&ControllerConfig> {
        self.controller.inline()
    }

    /// The ten trouble modes; without a catalog only normal operation exists.
    pub fn catalog(&self) -> Result<Vec<TroubleSpec>> {
        match &self.trouble_catalog {
            Some(c) => Ok(c.inline()?.clone()),
            None => Ok(Vec::new()),
        }
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("scenario serializes")))
    }

    /// Every finding on a resolved scenario.
    pub fn validate(&self) -> Vec<String> {
        let mut f = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            f.push(format!("schema_version: expected {SCHEMA_VERSION}, found {}", self.schema_version));
        }
        let plant = match self.plant_config() {
            Ok(p) => p,
            Err(e) => {
                f.push(format!("plant: {e}"));
                return f;
            }
        };
        let pf = plant.validate();
        let plant_ok = pf.is_empty();
        f.extend(pf.into_iter().map(|s| format!("plant: {s}")));
        let (n_u, n_y) = (plant.mv_tags.len(), plant.cv_tags.len());
        match self.controller_config() {
            Ok(c) => f.extend(c.validate(n_u, n_y).into_iter().map(|s| format!("controller: {s}"))),
            Err(e) => f.push(format!("controller: {e}")),
        }
        match self.catalog() {
            Ok(c) if !c.is_empty() => f.extend(validate_catalog(&c, n_u, n_y)),
            Ok(_) => {}
            Err(e) => f.push(format!("trouble_catalog: {e}")),
        }
        if plant_ok {
            let lo = plant.working_points.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = plant.working_points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (name, w) in [("w_from", self.task.w_from), ("w_to", self.task.w_to)] {
                if !(lo..=hi).contains(&w) {
                    f.push(format!("task.{name}: {w} lies outside the working points [{lo}, {hi}]"));
                }
            }
        }
        if self.max_steps == 0 {
            f.push("max_steps: must be positive".into());
        }
        if !(self.completion.tolerance > 0.0) || self.completion.hold_steps == 0 {
            f.push("completion: tolerance and hold_steps must be positive".into());
        }
        if let Some(i) = self.trouble_index {
            if i >= TROUBLE_MODES {
                f.push(format!("trouble_index: {i} is not below {TROUBLE_MODES}"));
            } else if i > 0 && self.catalog().map(|c| c.len() <= i).unwrap_or(true) {
                f.push(format!("trouble_index: {i} needs a trouble catalog"));
            }
        }
        if self.safety.cv >= n_y || self.safety.shutdown_below > self.safety.alarm_below {
            f.push("safety: CV index out of range or thresholds inverted".into());
        }
        if self.disturbance.channels.len() > n_y {
            f.push("disturbance: more channels than CVs".into());
        }
        if self.clock.mode == ClockMode::RealTime && !(self.clock.speed > 0.0) {
            f.push("clock.speed: must be positive".into());
        }
        f.extend(self.scoring.validate(n_u, n_y));
        f
    }
}
