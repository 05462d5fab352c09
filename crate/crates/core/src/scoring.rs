//! 0-100 operation score from safety, purity, completion time and energy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{check_contiguous, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub safety: f64,
    pub purity: f64,
    pub time: f64,
    pub energy: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            safety: 40.0,
            purity: 30.0,
            time: 15.0,
            energy: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub weights: ScoreWeights,
    pub safety_cv: usize,
    pub alarm_below: f64,
    pub shutdown_below: f64,
    pub purity_cv: usize,
    pub purity_floor: f64,
    /// Shortfall integral, in %·min, that empties the purity band.
    pub purity_scale: f64,
    pub energy_mv: usize,
    /// Excess integral, in MV units·min, that empties the energy band;
    /// by default a fraction of the baseline integral.
    pub energy_scale: Option<f64>,
    pub energy_scale_fraction: f64,
    pub full_time_min: f64,
    pub zero_time_min: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            weights: ScoreWeights::default(),
            safety_cv: 6,
            alarm_below: 97.0,
            shutdown_below: 92.0,
            purity_cv: 4,
            purity_floor: 99.6,
            purity_scale: 1.0,
            energy_mv: 0,
            energy_scale: None,
            energy_scale_fraction: 0.05,
            full_time_min: 20.0,
            zero_time_min: 40.0,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self, n_u: usize, n_y: usize) -> Vec<String> {
        let mut f = Vec::new();
        let w = self.weights;
        if [w.safety, w.purity, w.time, w.energy].iter().any(|v| !(*v >= 0.0)) {
            f.push("scoring: weights must be non-negative".into());
        }
        if (w.safety + w.purity + w.time + w.energy - 100.0).abs() > 1e-9 {
            f.push("scoring: weights must sum to 100".into());
        }
        if self.safety_cv >= n_y || self.purity_cv >= n_y {
            f.push("scoring: CV index out of range".into());
        }
        if self.energy_mv >= n_u {
            f.push("scoring: energy MV index out of range".into());
        }
        if !(self.purity_scale > 0.0) || self.energy_scale.is_some_and(|s| !(s > 0.0)) || !(self.energy_scale_fraction > 0.0) {
            f.push("scoring: scales must be positive".into());
        }
        if !(self.zero_time_min > self.full_time_min) {
            f.push("scoring: zero_time_min must exceed full_time_min".into());
        }
        if self.shutdown_below > self.alarm_below {
            f.push("scoring: shutdown threshold lies above the alarm threshold".into());
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEvent {
    pub t: u64,
    pub kind: String,
}

/// What the scorer needs besides the trace.
#[derive(Debug, Clone, Default)]
pub struct ScoreInput<'a> {
    pub period_min: f64,
    /// Minutes charged to the operator; `None` for sessions without a
    /// timed task.
    pub timed_minutes: Option<f64>,
    /// Energy-MV profile of the machine's own run of the same task, one
    /// value per step; later steps reuse the last value.
    pub baseline: &'a [f64],
    pub detection_latency_s: Option<f64>,
    pub events: Vec<ScoreEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub schema_version: u32,
    pub safety: f64,
    pub purity: f64,
    pub time: f64,
    pub energy: f64,
    pub total: f64,
    pub detection_latency_s: Option<f64>,
    pub events: Vec<ScoreEvent>,
}

fn band(weight: f64, penalty: f64) -> f64 {
    weight * (1.0 - penalty.clamp(0.0, 1.0))
}

pub fn time_subscore(cfg: &ScoringConfig, minutes: f64) -> f64 {
    let span = cfg.zero_time_min - cfg.full_time_min;
    band(cfg.weights.time, (minutes - cfg.full_time_min) / span)
}

/// Scores a finished trace. An empty trace is a task that was already
/// complete when the session began.
pub fn score(trace: &[TraceRow], cfg: &ScoringConfig, input: &ScoreInput) -> Result<ScoreBreakdown> {
    if !trace.is_empty() {
        check_contiguous(trace)?;
    }
    if input.baseline.is_empty() {
        return Err(Error::IncompleteTrace("no baseline profile".into()));
    }
    let dt = input.period_min;
    let n = trace.len().max(1) as f64;

    let shutdown = trace
        .iter()
        .any(|r| r.shutdown || r.cv[cfg.safety_cv] < cfg.shutdown_below);
    let low = trace.iter().filter(|r| r.cv[cfg.safety_cv] < cfg.alarm_below).count() as f64;
    let safety = if shutdown { 0.0 } else { band(cfg.weights.safety, low / n) };

    let shortfall: f64 = trace
        .iter()
        .map(|r| (cfg.purity_floor - r.cv[cfg.purity_cv]).max(0.0) * dt)
        .sum();
    let purity = band(cfg.weights.purity, shortfall / cfg.purity_scale);

    let time = match input.timed_minutes {
        Some(m) => time_subscore(cfg, m),
        None => cfg.weights.time,
    };

    let base_at = |i: usize| input.baseline[i.min(input.baseline.len() - 1)];
    let excess: f64 = trace
        .iter()
        .enumerate()
        .map(|(i, r)| (r.mv[cfg.energy_mv] - base_at(i)).max(0.0) * dt)
        .sum();
    let scale = cfg
        .energy_scale
        .unwrap_or_else(|| cfg.energy_scale_fraction * input.baseline.iter().map(|v| v.abs() * dt).sum::<f64>())
        .max(f64::MIN_POSITIVE);
    let energy = band(cfg.weights.energy, excess / scale);

    Ok(ScoreBreakdown {
        schema_version: 1,
        safety,
        purity,
        time,
        energy,
        total: safety + purity + time + energy,
        detection_latency_s: input.detection_latency_s,
        events: input.events.clone(),
    })
}
