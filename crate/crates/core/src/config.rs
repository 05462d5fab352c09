//! Plant model configuration files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lpv::{LocalModelSet, LpvModel};
use crate::tf::DiscreteTransferFunction;
use crate::weighting::{WeightKind, WeightingScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingConfig {
    #[serde(rename = "type", default)]
    pub kind: WeightKind,
    /// Per-CV override of the interpolant, keyed by CV tag.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_output: BTreeMap<String, WeightKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseConfig {
    pub mv: Vec<f64>,
    pub cv: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub name: String,
    /// Control period in minutes.
    #[serde(default = "default_period")]
    pub period_min: f64,
    pub working_points: Vec<f64>,
    pub mv_tags: Vec<String>,
    pub cv_tags: Vec<String>,
    pub working_point_cv: String,
    /// `[working point][cv][mv]`
    pub local_models: Vec<Vec<Vec<DiscreteTransferFunction>>>,
    pub weighting: WeightingConfig,
    pub w_bounds: [f64; 2],
    /// Operating point that deviation variables are measured from.
    pub base: BaseConfig,
    /// Physical MV ranges; steps outside are rejected.
    pub mv_limits: Limits,
}

fn default_period() -> f64 {
    0.5
}

impl ModelConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut findings = Vec::new();
        let (n_u, n_y) = (self.mv_tags.len(), self.cv_tags.len());
        if self.period_min <= 0.0 {
            findings.push(format!("period_min must be positive, got {}", self.period_min));
        }
        if !self.cv_tags.contains(&self.working_point_cv) {
            findings.push(format!(
                "working_point_cv `{}` is not a CV tag",
                self.working_point_cv
            ));
        }
        if self.local_models.len() != self.working_points.len() {
            findings.push(format!(
                "{} local model sets for {} working points",
                self.local_models.len(),
                self.working_points.len()
            ));
        }
        for tag in self.weighting.per_output.keys() {
            if !self.cv_tags.contains(tag) {
                findings.push(format!("weighting override for unknown CV `{tag}`"));
            }
        }
        for (j, set) in self.local_models.iter().enumerate() {
            if set.len() != n_y {
                findings.push(format!("local_models[{j}] has {} rows, expected {n_y}", set.len()));
                continue;
            }
            for (k, row) in set.iter().enumerate() {
                if row.len() != n_u {
                    findings.push(format!(
                        "local_models[{j}][{k}] has {} entries, expected {n_u}",
                        row.len()
                    ));
                    continue;
                }
                for (i, tf) in row.iter().enumerate() {
                    let at = || {
                        format!(
                            "local_models[{j}] {} <- {}",
                            self.cv_tags[k], self.mv_tags[i]
                        )
                    };
                    if let Err(e) = tf.check_shape() {
                        findings.push(format!("{}: {e}", at()));
                        continue;
                    }
                    if tf.steady_state_gain().is_err() {
                        findings.push(format!("{}: integrating channel", at()));
                    } else if !tf.is_zero() && !tf.is_stable() {
                        findings.push(format!("{}: denominator roots outside unit circle", at()));
                    }
                }
            }
        }
        if self.base.mv.len() != n_u {
            findings.push(format!("base.mv has {} entries, expected {n_u}", self.base.mv.len()));
        }
        if self.base.cv.len() != n_y {
            findings.push(format!("base.cv has {} entries, expected {n_y}", self.base.cv.len()));
        }
        if self.mv_limits.min.len() != n_u || self.mv_limits.max.len() != n_u {
            findings.push("mv_limits must have one entry per MV".into());
        } else {
            for i in 0..n_u {
                let (lo, hi) = (self.mv_limits.min[i], self.mv_limits.max[i]);
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    findings.push(format!("mv_limits for {} not ordered/finite", self.mv_tags[i]));
                } else if let Some(&b) = self.base.mv.get(i) {
                    if !(lo..=hi).contains(&b) {
                        findings.push(format!("base MV {} outside mv_limits", self.mv_tags[i]));
                    }
                }
            }
        }
        if let Some(k) = self.cv_tags.iter().position(|t| *t == self.working_point_cv) {
            if let Some(&wb) = self.base.cv.get(k) {
                if !self.working_points.contains(&wb) {
                    findings.push(format!("base working point {wb} is not a configured working point"));
                }
            }
        }
        let kinds: Vec<WeightKind> = self.weight_kinds();
        if let Err(e) = WeightingScheme::new(
            self.working_points.clone(),
            self.w_bounds[0],
            self.w_bounds[1],
            &kinds,
        ) {
            findings.push(e.to_string());
        }
        findings
    }

    fn weight_kinds(&self) -> Vec<WeightKind> {
        self.cv_tags
            .iter()
            .map(|t| {
                self.weighting
                    .per_output
                    .get(t)
                    .copied()
                    .unwrap_or(self.weighting.kind)
            })
            .collect()
    }

    pub fn working_point_index(&self) -> Option<usize> {
        self.cv_tags.iter().position(|t| *t == self.working_point_cv)
    }

    pub fn build(&self) -> Result<LpvModel> {
        let findings = self.validate();
        if !findings.is_empty() {
            return Err(Error::Validation(findings));
        }
        let weighting = WeightingScheme::new(
            self.working_points.clone(),
            self.w_bounds[0],
            self.w_bounds[1],
            &self.weight_kinds(),
        )?;
        let local = self
            .local_models
            .iter()
            .enumerate()
            .map(|(index, channels)| LocalModelSet {
                index,
                channels: channels.clone(),
            })
            .collect();
        LpvModel::new(
            self.mv_tags.clone(),
            self.cv_tags.clone(),
            self.working_point_index().expect("validated"),
            local,
            weighting,
        )
    }
}
