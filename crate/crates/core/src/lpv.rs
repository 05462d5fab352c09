//! Weighted LPV model: local transfer-function matrices at each working point,
//! blended output-side by the scheduling weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::{ChannelState, DiscreteTransferFunction};
use crate::weighting::WeightingScheme;

/// Dense `n_y x n_u` matrix of channels identified at one working point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModelSet {
    pub index: usize,
    pub channels: Vec<Vec<DiscreteTransferFunction>>,
}

impl LocalModelSet {
    pub fn n_y(&self) -> usize {
        self.channels.len()
    }

    pub fn n_u(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }
}

/// Row-major `n_y x n_u` steady-state gains evaluated at `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix {
    pub w: f64,
    pub rows: Vec<Vec<f64>>,
}

impl GainMatrix {
    pub fn n_y(&self) -> usize {
        self.rows.len()
    }

    pub fn n_u(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn mul(&self, u: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(u).map(|(g, x)| g * x).sum())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LpvModel {
    pub mv_tags: Vec<String>,
    pub cv_tags: Vec<String>,
    /// CV index whose value schedules the weights.
    pub working_point_cv: usize,
    pub local: Vec<LocalModelSet>,
    pub weighting: WeightingScheme,
    local_gains: Vec<Vec<Vec<f64>>>,
}

impl LpvModel {
    pub fn new(
        mv_tags: Vec<String>,
        cv_tags: Vec<String>,
        working_point_cv: usize,
        local: Vec<LocalModelSet>,
        weighting: WeightingScheme,
    ) -> Result<Self> {
        let (n_u, n_y) = (mv_tags.len(), cv_tags.len());
        if n_u == 0 || n_y == 0 {
            return Err(Error::Config("model needs at least one MV and one CV".into()));
        }
        if working_point_cv >= n_y {
            return Err(Error::Config(format!(
                "working-point CV index {working_point_cv} out of range"
            )));
        }
        if local.len() != weighting.n_w() {
            return Err(Error::Config(format!(
                "{} local model sets for {} working points",
                local.len(),
                weighting.n_w()
            )));
        }
        let mut local_gains = Vec::with_capacity(local.len());
        for set in &local {
            if set.n_y() != n_y || set.channels.iter().any(|r| r.len() != n_u) {
                return Err(Error::Config(format!(
                    "local model set {} is not {n_y} x {n_u}",
                    set.index
                )));
            }
            let mut gains = vec![vec![0.0; n_u]; n_y];
            for (k, row) in set.channels.iter().enumerate() {
                for (i, tf) in row.iter().enumerate() {
                    tf.check_shape()?;
                    gains[k][i] = tf.steady_state_gain().map_err(|_| {
                        Error::IntegratingChannel(format!(
                            "working point {}, {} <- {}",
                            set.index, cv_tags[k], mv_tags[i]
                        ))
                    })?;
                }
            }
            local_gains.push(gains);
        }
        Ok(Self {
            mv_tags,
            cv_tags,
            working_point_cv,
            local,
            weighting,
            local_gains,
        })
    }

    pub fn n_u(&self) -> usize {
        self.mv_tags.len()
    }

    pub fn n_y(&self) -> usize {
        self.cv_tags.len()
    }

    pub fn n_w(&self) -> usize {
        self.local.len()
    }

    pub fn channel(&self, j: usize, k: usize, i: usize) -> &DiscreteTransferFunction {
        &self.local[j].channels[k][i]
    }

    pub fn local_gain(&self, j: usize, k: usize, i: usize) -> f64 {
        self.local_gains[j][k][i]
    }

    /// Weights for every output at `w` (`n_y x n_w`), clamping `w` into range.
    pub fn weights_clamped(&self, w: f64) -> (Vec<Vec<f64>>, bool) {
        let mut clamped = false;
        let rows = (0..self.n_y())
            .map(|k| {
                let (row, c) = self.weighting.evaluate_clamped(k, w);
                clamped |= c;
                row
            })
            .collect();
        (rows, clamped)
    }

    pub fn weights(&self, w: f64) -> Result<Vec<Vec<f64>>> {
        (0..self.n_y()).map(|k| self.weighting.evaluate(k, w)).collect()
    }

    pub fn gain_matrix(&self, w: f64) -> Result<GainMatrix> {
        let weights = self.weights(w)?;
        Ok(self.gain_matrix_with(w, &weights))
    }

    pub fn gain_matrix_with(&self, w: f64, weights: &[Vec<f64>]) -> GainMatrix {
        let rows = (0..self.n_y())
            .map(|k| {
                (0..self.n_u())
                    .map(|i| {
                        (0..self.n_w())
                            .map(|j| weights[k][j] * self.local_gains[j][k][i])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        GainMatrix { w, rows }
    }

    /// Freezes the model at one working point.
    pub fn linearize_at(&self, w: f64) -> Result<FrozenModel<'_>> {
        Ok(FrozenModel {
            model: self,
            w,
            weights: self.weights(w)?,
        })
    }

    pub fn max_depth(&self) -> usize {
        self.local
            .iter()
            .flat_map(|s| s.channels.iter().flatten())
            .map(|tf| tf.order() + tf.d)
            .max()
            .unwrap_or(1)
    }

    /// A copy whose channel `(k, i)` gains are multiplied by `factors[k][i]`
    /// in every local set.
    pub fn with_gain_factors(&self, factors: &[Vec<f64>]) -> Result<Self> {
        let local = self
            .local
            .iter()
            .map(|set| LocalModelSet {
                index: set.index,
                channels: set
                    .channels
                    .iter()
                    .enumerate()
                    .map(|(k, row)| {
                        row.iter()
                            .enumerate()
                            .map(|(i, tf)| tf.scaled(factors[k][i]))
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        Self::new(
            self.mv_tags.clone(),
            self.cv_tags.clone(),
            self.working_point_cv,
            local,
            self.weighting.clone(),
        )
    }

    pub fn mv_index(&self, tag: &str) -> Option<usize> {
        self.mv_tags.iter().position(|t| t == tag)
    }

    pub fn cv_index(&self, tag: &str) -> Option<usize> {
        self.cv_tags.iter().position(|t| t == tag)
    }
}

/// LPV model frozen at a single working point: local channels kept, outputs
/// mixed with fixed weights.
#[derive(Debug, Clone)]
pub struct FrozenModel<'a> {
    pub model: &'a LpvModel,
    pub w: f64,
    /// `n_y x n_w`
    pub weights: Vec<Vec<f64>>,
}

impl FrozenModel<'_> {
    pub fn gain(&self, k: usize, i: usize) -> f64 {
        (0..self.model.n_w())
            .map(|j| self.weights[k][j] * self.model.local_gain(j, k, i))
            .sum()
    }

    pub fn step_response(&self, k: usize, i: usize, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for j in 0..self.model.n_w() {
            let alpha = self.weights[k][j];
            if alpha == 0.0 {
                continue;
            }
            for (o, s) in out.iter_mut().zip(self.model.channel(j, k, i).step_response(len)) {
                *o += alpha * s;
            }
        }
        out
    }

    /// Single transfer function equivalent to the weighted parallel
    /// connection of the local channels `(k, i)`.
    ///
    /// When only one distinct local channel carries weight it is returned
    /// verbatim.
    pub fn channel_tf(&self, k: usize, i: usize) -> DiscreteTransferFunction {
        let model = self.model;
        let mut terms: Vec<(f64, &DiscreteTransferFunction)> = Vec::new();
        for j in 0..model.n_w() {
            let alpha = self.weights[k][j];
            if alpha == 0.0 {
                continue;
            }
            let tf = model.channel(j, k, i);
            match terms.iter_mut().find(|(_, t)| *t == tf) {
                Some(term) => term.0 += alpha,
                None => terms.push((alpha, tf)),
            }
        }
        match terms.as_slice() {
            [] => DiscreteTransferFunction::zero(),
            [(alpha, tf)] if (alpha - 1.0).abs() < 1e-15 => (*tf).clone(),
            _ => parallel(&terms),
        }
    }
}

/// Polynomials in `q^-1`, constant term first.
fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn parallel(terms: &[(f64, &DiscreteTransferFunction)]) -> DiscreteTransferFunction {
    let dens: Vec<Vec<f64>> = terms
        .iter()
        .map(|(_, tf)| std::iter::once(1.0).chain(tf.a.iter().copied()).collect())
        .collect();
    let nums: Vec<Vec<f64>> = terms
        .iter()
        .map(|(alpha, tf)| {
            let mut p = vec![0.0; tf.d + 1];
            p.extend(tf.b.iter().map(|b| alpha * b));
            p
        })
        .collect();
    let mut den = vec![1.0];
    for d in &dens {
        den = poly_mul(&den, d);
    }
    let mut num = vec![0.0];
    for (j, n) in nums.iter().enumerate() {
        let mut p = n.clone();
        for (l, d) in dens.iter().enumerate() {
            if l != j {
                p = poly_mul(&p, d);
            }
        }
        if p.len() > num.len() {
            num.resize(p.len(), 0.0);
        }
        for (acc, v) in num.iter_mut().zip(p) {
            *acc += v;
        }
    }
    let order = (den.len() - 1).max(num.len() - 1).max(1);
    den.resize(order + 1, 0.0);
    num.resize(order + 1, 0.0);
    DiscreteTransferFunction {
        b: num[1..].to_vec(),
        a: den[1..].to_vec(),
        d: 0,
    }
}

/// Recursion memory of every local channel, driven by MV deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// `[j][k][i]`
    channels: Vec<Vec<Vec<ChannelState>>>,
}

impl ModelState {
    pub fn zero(model: &LpvModel) -> Self {
        Self {
            channels: model
                .local
                .iter()
                .map(|set| {
                    set.channels
                        .iter()
                        .map(|row| row.iter().map(ChannelState::new).collect())
                        .collect()
                })
                .collect(),
        }
    }

    /// State after holding the deviation input `u` forever.
    pub fn steady(model: &LpvModel, u: &[f64]) -> Result<Self> {
        let channels = model
            .local
            .iter()
            .map(|set| {
                set.channels
                    .iter()
                    .map(|row| {
                        row.iter()
                            .zip(u)
                            .map(|(tf, &ui)| ChannelState::steady(tf, ui))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { channels })
    }

    pub fn step(&mut self, model: &LpvModel, u: &[f64]) {
        for (j, set) in self.channels.iter_mut().enumerate() {
            for (k, row) in set.iter_mut().enumerate() {
                for (i, st) in row.iter_mut().enumerate() {
                    st.step(model.channel(j, k, i), u[i]);
                }
            }
        }
    }

    /// Memory of the same inputs fed through channels whose gains are scaled
    /// by `factors[k][i]`.
    pub fn with_gain_factors(&self, factors: &[Vec<f64>]) -> Self {
        let mut out = self.clone();
        for set in out.channels.iter_mut() {
            for (k, row) in set.iter_mut().enumerate() {
                for (i, st) in row.iter_mut().enumerate() {
                    st.scale_outputs(factors[k][i]);
                }
            }
        }
        out
    }

    /// Output of channel `(k, i)` of local set `j`.
    pub fn channel_output(&self, j: usize, k: usize, i: usize) -> f64 {
        self.channels[j][k][i].output()
    }

    /// Local outputs `[j][k]`, summing only the MVs for which `mask` is true
    /// and scaling each channel by `factor(k, i)`.
    pub fn local_outputs_with(
        &self,
        mask: Option<&[bool]>,
        factors: Option<&[Vec<f64>]>,
    ) -> Vec<Vec<f64>> {
        self.channels
            .iter()
            .map(|set| {
                set.iter()
                    .enumerate()
                    .map(|(k, row)| {
                        row.iter()
                            .enumerate()
                            .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
                            .map(|(i, st)| st.output() * factors.map_or(1.0, |f| f[k][i]))
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn local_outputs(&self) -> Vec<Vec<f64>> {
        self.local_outputs_with(None, None)
    }

    pub fn check_shape(&self, model: &LpvModel) -> bool {
        self.channels.len() == model.n_w()
            && self.channels.iter().enumerate().all(|(j, set)| {
                set.len() == model.n_y()
                    && set.iter().enumerate().all(|(k, row)| {
                        row.len() == model.n_u()
                            && row.iter().enumerate().all(|(i, st)| {
                                let tf = model.channel(j, k, i);
                                st.depth() == tf.order() + tf.d
                            })
                    })
            })
    }
}

/// Blends local outputs `[j][k]` with weights `[k][j]`.
pub fn blend(local: &[Vec<f64>], weights: &[Vec<f64>]) -> Vec<f64> {
    (0..weights.len())
        .map(|k| {
            weights[k]
                .iter()
                .zip(local)
                .map(|(alpha, y)| alpha * y[k])
                .sum()
        })
        .collect()
}

/// Output series of CV `k` for an MV deviation history.
///
/// `mv_history[s]` is applied at step `s` and `w_history[s]` is the working
/// point observed at that step; output `s` is `y_k(s + 1)`, blended with the
/// weights at `w_history[s]`.
pub fn compose_series(
    model: &LpvModel,
    k: usize,
    mv_history: &[Vec<f64>],
    w_history: &[f64],
) -> Result<Vec<f64>> {
    if mv_history.is_empty() || w_history.len() < mv_history.len() {
        return Err(Error::Config(
            "histories must be non-empty and of matching length".into(),
        ));
    }
    let mut out = Vec::with_capacity(mv_history.len());
    let mut state = ModelState::zero(model);
    for (u, &w) in mv_history.iter().zip(w_history) {
        state.step(model, u);
        let alpha = model.weighting.evaluate(k, w)?;
        let local = state.local_outputs();
        out.push(alpha.iter().zip(&local).map(|(a, y)| a * y[k]).sum());
    }
    Ok(out)
}

/// Final sample of [`compose_series`].
pub fn compose_output(
    model: &LpvModel,
    k: usize,
    mv_history: &[Vec<f64>],
    w_history: &[f64],
) -> Result<f64> {
    Ok(*compose_series(model, k, mv_history, w_history)?
        .last()
        .expect("non-empty"))
}
