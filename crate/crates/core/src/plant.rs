//! Ground-truth plant: the LPV model stepped at the control period, plus
//! output disturbances, a measurement layer and the CV7 safety monitor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::lpv::{blend, LpvModel, ModelState};

pub const SNAPSHOT_VERSION: u32 = 1;

/// Operating point deviation variables are measured from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePoint {
    pub mv: Vec<f64>,
    pub cv: Vec<f64>,
}

impl BasePoint {
    pub fn mv_dev(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.mv).map(|(u, b)| u - b).collect()
    }

    pub fn cv_dev(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.cv).map(|(y, b)| y - b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DisturbanceChannel {
    #[default]
    None,
    Constant {
        offset: f64,
    },
    /// `v(t) = pole * v(t-1) + amplitude * e(t)`, `e ~ N(0, 1)`.
    FilteredNoise {
        amplitude: f64,
        pole: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DisturbanceModel {
    /// One entry per CV; missing entries mean no disturbance.
    #[serde(default)]
    pub channels: Vec<DisturbanceChannel>,
    #[serde(default)]
    pub seed: u64,
}

impl DisturbanceModel {
    pub fn none() -> Self {
        Self::default()
    }

    fn channel(&self, k: usize) -> DisturbanceChannel {
        self.channels.get(k).copied().unwrap_or_default()
    }

    /// White noise sample for CV `k` at step `t`, a pure function of
    /// `(seed, k, t)`.
    fn innovation(&self, k: usize, t: u64) -> f64 {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&(k as u64).to_le_bytes());
        seed[16..24].copy_from_slice(&t.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(seed);
        StandardNormal.sample(&mut rng)
    }

    /// Advances the filter memory to step `t` and returns `v(t)`.
    fn advance(&self, memory: &mut [f64], t: u64) -> Vec<f64> {
        memory
            .iter_mut()
            .enumerate()
            .map(|(k, v)| {
                *v = match self.channel(k) {
                    DisturbanceChannel::None => 0.0,
                    DisturbanceChannel::Constant { offset } => offset,
                    DisturbanceChannel::FilteredNoise { amplitude, pole } => {
                        pole * *v + amplitude * self.innovation(k, t)
                    }
                };
                *v
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementLayer {
    pub bias: Vec<f64>,
    pub enabled: Vec<bool>,
}

impl MeasurementLayer {
    pub fn transparent(n_y: usize) -> Self {
        Self {
            bias: vec![0.0; n_y],
            enabled: vec![false; n_y],
        }
    }

    pub fn set_bias(&mut self, k: usize, bias: f64) {
        self.bias[k] = bias;
        self.enabled[k] = true;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig {
    pub cv: usize,
    pub alarm_below: f64,
    pub shutdown_below: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SafetyStatus {
    pub alarm: bool,
    pub shutdown: bool,
    pub alarm_at: Option<u64>,
    pub shutdown_at: Option<u64>,
}

impl SafetyStatus {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// Latches the alarm and shutdown flags from the measured CVs at step `t`.
pub fn safety_check(measured: &[f64], status: &SafetyStatus, cfg: &SafetyConfig, t: u64) -> SafetyStatus {
    let mut next = status.clone();
    let v = measured[cfg.cv];
    if v < cfg.alarm_below && !next.alarm {
        next.alarm = true;
        next.alarm_at = Some(t);
    }
    if v < cfg.shutdown_below && !next.shutdown {
        next.shutdown = true;
        next.shutdown_at = Some(t);
        if !next.alarm {
            next.alarm = true;
            next.alarm_at = Some(t);
        }
    }
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub t: u64,
    pub channels: ModelState,
    /// True CVs, engineering units.
    pub cv: Vec<f64>,
    /// MVs applied at the last step, engineering units.
    pub mv: Vec<f64>,
    /// Working point, equal to the true working-point CV.
    pub w: f64,
    pub disturbance_memory: Vec<f64>,
}

impl PlantState {
    /// SHA-256 over the serialized state.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("state serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSnapshot {
    pub version: u32,
    pub config_hash: String,
    pub state: PlantState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub cv: Vec<f64>,
    /// The working point fell outside the weighting range and was clamped.
    pub clamped: bool,
}

/// Immutable plant definition shared by every state instance.
#[derive(Debug, Clone)]
pub struct Plant {
    pub model: LpvModel,
    pub base: BasePoint,
    pub mv_min: Vec<f64>,
    pub mv_max: Vec<f64>,
    pub period_min: f64,
    config_hash: String,
}

impl Plant {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            model: cfg.build()?,
            base: BasePoint {
                mv: cfg.base.mv.clone(),
                cv: cfg.base.cv.clone(),
            },
            mv_min: cfg.mv_limits.min.clone(),
            mv_max: cfg.mv_limits.max.clone(),
            period_min: cfg.period_min,
            config_hash: cfg.hash(),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn n_u(&self) -> usize {
        self.model.n_u()
    }

    pub fn n_y(&self) -> usize {
        self.model.n_y()
    }

    /// Steady state reached by holding `mv` (engineering units) forever,
    /// blending at the self-consistent working point.
    pub fn steady_state(&self, mv: &[f64]) -> Result<PlantState> {
        self.check_mv(mv)?;
        let du = self.base.mv_dev(mv);
        let channels = ModelState::steady(&self.model, &du)?;
        let local = channels.local_outputs();
        let wk = self.model.working_point_cv;
        let mut w = self.base.cv[wk];
        let mut cv = self.base.cv.clone();
        for _ in 0..200 {
            let (weights, _) = self.model.weights_clamped(w);
            cv = blend(&local, &weights)
                .iter()
                .zip(&self.base.cv)
                .map(|(d, b)| d + b)
                .collect();
            if (cv[wk] - w).abs() < 1e-10 {
                break;
            }
            w = cv[wk];
        }
        Ok(PlantState {
            t: 0,
            channels,
            w: cv[wk],
            cv,
            mv: mv.to_vec(),
            disturbance_memory: vec![0.0; self.n_y()],
        })
    }

    /// Equilibrium at the base point.
    pub fn initial_state(&self) -> PlantState {
        self.steady_state(&self.base.mv)
            .expect("base MVs lie within limits")
    }

    pub fn check_mv(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.n_u() {
            return Err(Error::Config(format!("expected {} MVs, got {}", self.n_u(), u.len())));
        }
        for (i, &v) in u.iter().enumerate() {
            if !(self.mv_min[i]..=self.mv_max[i]).contains(&v) {
                return Err(Error::OutOfRange {
                    what: self.model.mv_tags[i].clone(),
                    value: v,
                    min: self.mv_min[i],
                    max: self.mv_max[i],
                });
            }
        }
        Ok(())
    }

    /// Applies `u` for one control period.
    pub fn step(
        &self,
        state: &mut PlantState,
        u: &[f64],
        disturbance: &DisturbanceModel,
    ) -> Result<StepOutcome> {
        self.check_mv(u)?;
        let du = self.base.mv_dev(u);
        state.channels.step(&self.model, &du);
        state.t += 1;
        let v = disturbance.advance(&mut state.disturbance_memory, state.t);
        let (weights, clamped) = self.model.weights_clamped(state.w);
        let local = state.channels.local_outputs();
        let y = blend(&local, &weights);
        state.cv = y
            .iter()
            .zip(&v)
            .zip(&self.base.cv)
            .map(|((y, v), b)| y + v + b)
            .collect();
        state.mv = u.to_vec();
        state.w = state.cv[self.model.working_point_cv];
        Ok(StepOutcome {
            cv: state.cv.clone(),
            clamped,
        })
    }

    pub fn measure(&self, state: &PlantState, layer: &MeasurementLayer) -> Vec<f64> {
        measure(state, layer)
    }

    pub fn snapshot(&self, state: &PlantState) -> PlantSnapshot {
        PlantSnapshot {
            version: SNAPSHOT_VERSION,
            config_hash: self.config_hash.clone(),
            state: state.clone(),
        }
    }

    pub fn restore(&self, snapshot: &PlantSnapshot) -> Result<PlantState> {
        if snapshot.config_hash != self.config_hash {
            return Err(Error::ConfigMismatch {
                expected: self.config_hash.clone(),
                found: snapshot.config_hash.clone(),
            });
        }
        if snapshot.version != SNAPSHOT_VERSION || !snapshot.state.channels.check_shape(&self.model) {
            return Err(Error::Config("snapshot layout does not match the model".into()));
        }
        Ok(snapshot.state.clone())
    }
}

pub fn measure(state: &PlantState, layer: &MeasurementLayer) -> Vec<f64> {
    state
        .cv
        .iter()
        .enumerate()
        .map(|(k, &y)| {
            if layer.enabled.get(k).copied().unwrap_or(false) {
                y + layer.bias[k]
            } else {
                y
            }
        })
        .collect()
}
