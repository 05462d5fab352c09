//! One controller cycle: read state, steady-state targets, references,
//! iterative move plan, first move.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpv::{blend, LpvModel, ModelState};
use crate::ndpc::{
    build_reference, iterate_ndpc, ControllerView, MovePlan, NdpcConfig, OnNonConvergence,
    PlanLimits, StepTable,
};
use crate::plant::{BasePoint, Plant, PlantState};
use crate::sso::{compute_bias, solve_sso, SsoConfig, SsoResult};

/// How MVs held by the operator enter the controller's prediction model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OperatorMvModel {
    /// Their columns are removed; the bias absorbs their effect.
    #[default]
    Zeroed,
    /// Their current values are fed forward as known inputs.
    MeasuredDisturbance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub sso: SsoConfig,
    pub ndpc: NdpcConfig,
    #[serde(default)]
    pub operator_mvs: OperatorMvModel,
}

impl ControllerConfig {
    pub fn validate(&self, n_u: usize, n_y: usize) -> Vec<String> {
        let mut f: Vec<String> = self.sso.validate().into_iter().map(|s| format!("sso: {s}")).collect();
        if self.sso.n_u() != n_u || self.sso.n_y() != n_y {
            f.push(format!(
                "sso: sized {}x{} but the model is {n_y}x{n_u}",
                self.sso.n_y(),
                self.sso.n_u()
            ));
        }
        f.extend(self.ndpc.validate(n_u, n_y).into_iter().map(|s| format!("ndpc: {s}")));
        f
    }
}

/// Target band for one CV, applied to the steady-state layer only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub cv: usize,
    pub min: f64,
    pub max: f64,
}

/// Per-cycle inputs from the session.
#[derive(Debug, Clone, Default)]
pub struct StepRequest<'a> {
    pub t: u64,
    /// CVs as the controller sees them.
    pub measured: &'a [f64],
    pub u_prev: &'a [f64],
    pub demand: Option<Demand>,
    /// MVs the machine operates; `None` means all.
    pub machine_mvs: Option<&'a [bool]>,
    /// Replacement rate limits.
    pub rate_limits: Option<(&'a [f64], &'a [f64])>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStatus {
    pub sso: String,
    pub qp: String,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: u64,
    pub measured: Vec<f64>,
    /// Steady-state bias fed to the target LP.
    pub bias: Vec<f64>,
    /// Measured minus internal-model CVs, fed to the prediction.
    pub output_bias: Vec<f64>,
    pub w: f64,
    /// MVs the machine decided; the others were held by the operator.
    pub machine_mvs: Vec<bool>,
    pub sso: SsoResult,
    /// `[l-1][k]`
    pub reference: Vec<Vec<f64>>,
    pub plan: MovePlan,
    pub applied: Vec<f64>,
    pub iterations: usize,
    pub status: SolverStatus,
}

/// Controller-side memory that survives between cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    /// Nominal-model channel memory driven by the applied MVs.
    pub channels: ModelState,
    /// Working point at the previous cycle.
    pub last_w: f64,
    #[serde(default)]
    pub last_plan: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ImpcEngine {
    nominal: LpvModel,
    model: LpvModel,
    gain_factors: Option<Vec<Vec<f64>>>,
    steps: StepTable,
    pub base: BasePoint,
    pub config: ControllerConfig,
    pub period: f64,
    pub state: EngineState,
}

impl ImpcEngine {
    /// Engine whose internal model sits at the steady state of `u0`.
    pub fn new(model: LpvModel, base: BasePoint, config: ControllerConfig, period: f64, u0: &[f64], w0: f64) -> Result<Self> {
        let f = config.validate(model.n_u(), model.n_y());
        if !f.is_empty() {
            return Err(Error::Validation(f));
        }
        let dev = base.mv_dev(u0);
        let channels = ModelState::steady(&model, &dev)?;
        let steps = StepTable::new(&model, config.ndpc.P);
        Ok(Self {
            nominal: model.clone(),
            model,
            gain_factors: None,
            steps,
            base,
            config,
            period,
            state: EngineState { channels, last_w: w0, last_plan: None },
        })
    }

    pub fn model(&self) -> &LpvModel {
        &self.model
    }

    pub fn gain_factors(&self) -> Option<&[Vec<f64>]> {
        self.gain_factors.as_deref()
    }

    /// Swaps the controller's model for one with channel gains scaled by
    /// `factors[k][i]`; `None` restores the nominal model.
    pub fn set_gain_factors(&mut self, factors: Option<Vec<Vec<f64>>>) -> Result<()> {
        if factors == self.gain_factors {
            return Ok(());
        }
        self.model = match &factors {
            Some(f) => self.nominal.with_gain_factors(f)?,
            None => self.nominal.clone(),
        };
        self.steps = StepTable::new(&self.model, self.config.ndpc.P);
        self.gain_factors = factors;
        Ok(())
    }

    fn channels(&self) -> ModelState {
        match &self.gain_factors {
            Some(f) => self.state.channels.with_gain_factors(f),
            None => self.state.channels.clone(),
        }
    }

    /// Internal-model CV prediction for the current period.
    pub fn model_output(&self, visible: Option<&[bool]>) -> Vec<f64> {
        let (alpha, _) = self.model.weights_clamped(self.state.last_w);
        let local = self.channels().local_outputs_with(visible, None);
        blend(&local, &alpha)
            .iter()
            .zip(&self.base.cv)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Decides the move for this period without touching any state.
    pub fn impc_step(&self, req: &StepRequest) -> Result<DecisionRecord> {
        let model = &self.model;
        let (n_u, n_y) = (model.n_u(), model.n_y());
        if req.measured.len() != n_y || req.u_prev.len() != n_u {
            return Err(Error::Config("measurement or MV vector has the wrong length".into()));
        }
        let cfg = &self.config;
        let free: Vec<bool> = req.machine_mvs.map_or(vec![true; n_u], |m| m.to_vec());
        let visible: Vec<bool> = match cfg.operator_mvs {
            OperatorMvModel::Zeroed => free.clone(),
            OperatorMvModel::MeasuredDisturbance => vec![true; n_u],
        };
        let w = req.measured[model.working_point_cv];

        // steady-state targets
        let mut k = model.gain_matrix_with(w, &model.weights_clamped(w).0);
        for row in k.rows.iter_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                if !visible[i] {
                    *v = 0.0;
                }
            }
        }
        let y_dev = self.base.cv_dev(req.measured);
        let u_dev = self.base.mv_dev(req.u_prev);
        let bias = compute_bias(&y_dev, &u_dev, &k);
        let mut sso_cfg = cfg.sso.clone();
        for i in 0..n_u {
            if !free[i] {
                sso_cfg.u_min[i] = req.u_prev[i];
                sso_cfg.u_max[i] = req.u_prev[i];
            }
        }
        if let Some(d) = req.demand {
            sso_cfg.y_min[d.cv] = d.min;
            sso_cfg.y_max[d.cv] = d.max;
        }
        // Y = K(U - u_base) + y_base + D in absolute units
        let offset: Vec<f64> = (0..n_y)
            .map(|kk| {
                self.base.cv[kk] + bias[kk]
                    - (0..n_u).map(|i| k.rows[kk][i] * self.base.mv[i]).sum::<f64>()
            })
            .collect();
        let sso = solve_sso(&sso_cfg, &k, &offset, req.u_prev)?;

        // move plan
        let model_y = self.model_output(Some(&visible));
        let output_bias: Vec<f64> = req.measured.iter().zip(&model_y).map(|(a, b)| a - b).collect();
        let channels = self.channels();
        let view = ControllerView {
            model,
            base_mv: &self.base.mv,
            base_cv: &self.base.cv,
            channels: &channels,
            bias: &output_bias,
            y_now: req.measured,
            u_prev: req.u_prev,
            w_init: w,
            visible: Some(&visible),
            free: Some(&free),
        };
        let mut ndpc = cfg.ndpc.clone();
        if let Some((lo, hi)) = req.rate_limits {
            ndpc.du_min = lo.to_vec();
            ndpc.du_max = hi.to_vec();
        }
        let u_scale: Vec<f64> = (0..n_u).map(|i| (cfg.sso.u_max[i] - cfg.sso.u_min[i]).max(1e-9)).collect();
        let y_scale: Vec<f64> = (0..n_y)
            .map(|kk| {
                let (lo, hi) = (cfg.sso.y_min[kk], cfg.sso.y_max[kk]);
                if lo.is_finite() && hi.is_finite() && hi > lo {
                    hi - lo
                } else {
                    self.base.cv[kk].abs().max(1.0)
                }
            })
            .collect();
        let limits = PlanLimits {
            u_min: &cfg.sso.u_min,
            u_max: &cfg.sso.u_max,
            y_min: &cfg.sso.y_min,
            y_max: &cfg.sso.y_max,
            u_scale: &u_scale,
            y_scale: &y_scale,
            period: self.period,
        };
        let plan = iterate_ndpc(
            &view,
            &self.steps,
            &ndpc,
            &sso.y,
            &sso.u,
            &limits,
            self.state.last_plan.as_deref(),
        )?;
        let reference = build_reference(req.measured, &sso.y, &ndpc.tau, self.period, ndpc.P);
        let applied = if !plan.converged && ndpc.on_nonconvergence == OnNonConvergence::Hold {
            req.u_prev.to_vec()
        } else {
            plan.first_move().to_vec()
        };
        Ok(DecisionRecord {
            t: req.t,
            measured: req.measured.to_vec(),
            bias,
            output_bias,
            w,
            machine_mvs: free,
            status: SolverStatus {
                sso: format!("{:?}", sso.status).to_lowercase(),
                qp: format!("{:?}", plan.qp.status).to_lowercase(),
                converged: plan.converged,
            },
            iterations: plan.iterations,
            sso,
            reference,
            plan,
            applied,
        })
    }

    /// Advances the internal model with what was actually applied.
    pub fn commit(&mut self, w_now: f64, applied: &[f64], plan: Option<&MovePlan>) {
        let dev = self.base.mv_dev(applied);
        self.state.channels.step(&self.nominal, &dev);
        self.state.last_w = w_now;
        self.state.last_plan = plan.map(|p| p.u.clone());
    }
}

/// MVs and plant equilibrium at which the target layer, asked to hold the
/// working-point CV at `w`, is at rest.
pub fn settle_at(plant: &Plant, cfg: &ControllerConfig, w: f64) -> Result<(Vec<f64>, PlantState)> {
    let model = &plant.model;
    let wk = model.working_point_cv;
    let (n_u, n_y) = (model.n_u(), model.n_y());
    let mut u = plant.base.mv.clone();
    let mut state = plant.steady_state(&u)?;
    let mut sso_cfg = cfg.sso.clone();
    sso_cfg.y_min[wk] = w;
    sso_cfg.y_max[wk] = w;
    for _ in 0..100 {
        let k = model.gain_matrix_with(state.w, &model.weights_clamped(state.w).0);
        let bias = compute_bias(&plant.base.cv_dev(&state.cv), &plant.base.mv_dev(&u), &k);
        let offset: Vec<f64> = (0..n_y)
            .map(|kk| {
                plant.base.cv[kk] + bias[kk]
                    - (0..n_u).map(|i| k.rows[kk][i] * plant.base.mv[i]).sum::<f64>()
            })
            .collect();
        let next = solve_sso(&sso_cfg, &k, &offset, &u)?.u;
        let moved = next
            .iter()
            .zip(&u)
            .enumerate()
            .map(|(i, (a, b))| (a - b).abs() / (cfg.sso.u_max[i] - cfg.sso.u_min[i]).max(1e-9))
            .fold(0.0f64, f64::max);
        u = next;
        state = plant.steady_state(&u)?;
        if moved < 1e-10 && (state.w - w).abs() < 1e-6 {
            return Ok((u, state));
        }
    }
    Err(Error::Solver(format!("no equilibrium found at working point {w}")))
}
