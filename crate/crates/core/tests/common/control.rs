//! Closed-loop drivers and controller fixtures.

use dlc_core::config::ModelConfig;
use dlc_core::impc::{settle_at, ControllerConfig, DecisionRecord, Demand, ImpcEngine, StepRequest};
use dlc_core::lpv::{LocalModelSet, LpvModel, ModelState};
use dlc_core::ndpc::{
    build_reference, condense, iterate_ndpc, solve_qp, ControllerView, Diag, NdpcConfig, OnNonConvergence,
    PlanLimits, QpInputs, StepTable, WarmStart,
};
use dlc_core::plant::{DisturbanceChannel, DisturbanceModel, Plant, PlantState};
use dlc_core::tf::DiscreteTransferFunction;
use dlc_core::weighting::WeightingScheme;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::KNOTS;

pub struct Loop {
    pub plant: Plant,
    pub engine: ImpcEngine,
    pub state: PlantState,
}

impl Loop {
    pub fn settled(plant: Plant, cfg: ControllerConfig, w: f64) -> Self {
        let (u0, state) = settle_at(&plant, &cfg, w).unwrap();
        let engine = ImpcEngine::new(plant.model.clone(), plant.base.clone(), cfg, plant.period_min, &u0, state.w).unwrap();
        Self { plant, engine, state }
    }

    /// One controller period with `offset` added to what the controller reads.
    pub fn step(&mut self, demand: Option<Demand>, offset: &[f64], dist: &DisturbanceModel) -> DecisionRecord {
        let measured: Vec<f64> = self.state.cv.iter().zip(offset).map(|(y, o)| y + o).collect();
        let rec = self
            .engine
            .impc_step(&StepRequest {
                t: self.state.t,
                measured: &measured,
                u_prev: &self.state.mv,
                demand,
                ..Default::default()
            })
            .unwrap();
        let u: Vec<f64> = rec
            .applied
            .iter()
            .enumerate()
            .map(|(i, v)| v.clamp(self.plant.mv_min[i], self.plant.mv_max[i]))
            .collect();
        self.engine.commit(self.state.w, &u, Some(&rec.plan));
        self.plant.step(&mut self.state, &u, dist).unwrap();
        rec
    }
}

pub fn hold(w: f64) -> Option<Demand> {
    Some(Demand { cv: 1, min: w, max: w })
}

/// Steps until the measured CV sits within `tol` of its steady-state
/// target for ten consecutive periods; returns the first step of that run.
pub fn settles_within(lp: &mut Loop, cv: usize, tol: f64, dist: &DisturbanceModel, demand: Option<Demand>) -> Option<usize> {
    let zero = vec![0.0; lp.plant.n_y()];
    let mut run = 0;
    for n in 1..=80 {
        let rec = lp.step(demand, &zero, dist);
        // the record's target was computed for the reading it was given
        if (rec.measured[cv] - rec.sso.y[cv]).abs() <= tol {
            run += 1;
            if run == 10 {
                return Some(n - 10);
            }
        } else {
            run = 0;
        }
    }
    None
}

pub fn constant(cv: usize, offset: f64) -> DisturbanceModel {
    let mut channels = vec![DisturbanceChannel::None; 7];
    channels[cv] = DisturbanceChannel::Constant { offset };
    DisturbanceModel { channels, seed: 0 }
}

/// One MV, one CV, the same first-order model at every knot.
pub fn single_loop() -> (Plant, ControllerConfig) {
    let channel = json!({"b": [0.2 * (1.0 - (-0.25f64).exp())], "a": [-(-0.25f64).exp()], "d": 0});
    let model: ModelConfig = serde_json::from_value(json!({
        "name": "single loop",
        "period_min": 0.5,
        "working_points": [8.0, 10.0, 12.0, 14.0],
        "mv_tags": ["U"],
        "cv_tags": ["Y"],
        "working_point_cv": "Y",
        "local_models": [[[channel]], [[channel]], [[channel]], [[channel]]],
        "weighting": {"type": "natural_cubic_spline"},
        "w_bounds": [6.0, 16.0],
        "base": {"mv": [40.0], "cv": [8.0]},
        "mv_limits": {"min": [0.0], "max": [100.0]}
    }))
    .unwrap();
    let ctl: ControllerConfig = serde_json::from_value(json!({
        "sso": {"B": [0.0], "C": [-1.0], "Z": [1000.0], "u_min": [0.0], "u_max": [100.0], "y_min": [0.0], "y_max": [10.0]},
        "ndpc": {"P": 20, "M": 5, "Q": [1.0], "H": [1000.0], "R": [0.1], "V": [0.0], "tau": [2.0],
                 "du_min": [-5.0], "du_max": [5.0]}
    }))
    .unwrap();
    (Plant::from_config(&model).unwrap(), ctl)
}

fn random_model(rng: &mut ChaCha8Rng, n_y: usize, n_u: usize) -> LpvModel {
    let channels: Vec<Vec<DiscreteTransferFunction>> = (0..n_y)
        .map(|k| {
            (0..n_u)
                .map(|_| {
                    // the scheduling CV gets a large gain so w actually travels
                    let scale = if k == 0 { 400.0 } else { 1.0 };
                    let gain = scale * rng.gen_range(-2.0..2.0);
                    DiscreteTransferFunction::first_order(gain, rng.gen_range(0.5..4.0), 0.5, rng.gen_range(0..3))
                })
                .collect()
        })
        .collect();
    let local = (0..KNOTS.len())
        .map(|index| LocalModelSet {
            index,
            channels: channels.clone(),
        })
        .collect();
    LpvModel::new(
        (0..n_u).map(|i| format!("U{i}")).collect(),
        (0..n_y).map(|k| format!("Y{k}")).collect(),
        0,
        local,
        WeightingScheme::shared(KNOTS.to_vec(), 17500.0, 21500.0, n_y).unwrap(),
    )
    .unwrap()
}

fn positive(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Largest plan difference between the outer iteration and one condensed
/// QP, the iteration count and the convergence flag.
pub fn linear_case(seed: u64) -> (f64, usize, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_y = rng.gen_range(1..=3);
    let n_u = rng.gen_range(1..=3);
    let model = random_model(&mut rng, n_y, n_u);

    let base_mv = vec![0.0; n_u];
    let mut base_cv = positive(&mut rng, n_y, -5.0, 5.0);
    base_cv[0] = rng.gen_range(18200.0..20800.0);
    let mut channels = ModelState::zero(&model);
    for _ in 0..6 {
        channels.step(&model, &positive(&mut rng, n_u, -0.5, 0.5));
    }
    let bias = positive(&mut rng, n_y, -0.2, 0.2);
    let u_prev = positive(&mut rng, n_u, -0.5, 0.5);
    let y_now: Vec<f64> = base_cv.iter().zip(&bias).map(|(b, d)| b + d).collect();
    let w_init = y_now[0];

    let cfg = NdpcConfig {
        P: rng.gen_range(4..=10),
        M: rng.gen_range(1..=3),
        Q: Diag::Constant(positive(&mut rng, n_y, 0.5, 5.0)),
        H: Diag::Constant(positive(&mut rng, n_y, 10.0, 100.0)),
        R: Diag::Constant(positive(&mut rng, n_u, 0.01, 1.0)),
        V: Diag::Constant(positive(&mut rng, n_u, 0.0, 0.1)),
        tau: positive(&mut rng, n_y, 0.5, 3.0),
        tol_u: None,
        max_iter: 10,
        du_min: positive(&mut rng, n_u, -0.6, -0.1),
        du_max: positive(&mut rng, n_u, 0.1, 0.6),
        warm_start: WarmStart::Repeat,
        on_nonconvergence: OnNonConvergence::ApplyLast,
    };
    let u_min = vec![-2.0; n_u];
    let u_max = vec![2.0; n_u];
    let y_min: Vec<f64> = base_cv.iter().map(|b| b - 3.0 * b.abs().max(1.0)).collect();
    let y_max: Vec<f64> = base_cv.iter().map(|b| b + 0.02 * b.abs().max(1.0)).collect();
    let u_scale = vec![4.0; n_u];
    let y_scale: Vec<f64> = base_cv.iter().map(|b| b.abs().max(1.0)).collect();
    let y_target: Vec<f64> = base_cv.iter().map(|b| b + rng.gen_range(-0.05..0.05) * b.abs().max(1.0)).collect();
    let u_target = positive(&mut rng, n_u, -1.0, 1.0);

    let view = ControllerView {
        model: &model,
        base_mv: &base_mv,
        base_cv: &base_cv,
        channels: &channels,
        bias: &bias,
        y_now: &y_now,
        u_prev: &u_prev,
        w_init,
        visible: None,
        free: None,
    };
    let steps = StepTable::new(&model, cfg.P);
    let limits = PlanLimits {
        u_min: &u_min,
        u_max: &u_max,
        y_min: &y_min,
        y_max: &y_max,
        u_scale: &u_scale,
        y_scale: &y_scale,
        period: 0.5,
    };
    let plan = iterate_ndpc(&view, &steps, &cfg, &y_target, &u_target, &limits, None).unwrap();

    let (frozen, _) = model.weights_clamped(w_init);
    let cond = condense(&view, &steps, &vec![frozen; cfg.P], cfg.M);
    let reference = build_reference(&y_now, &y_target, &cfg.tau, 0.5, cfg.P);
    let direct = solve_qp(
        &cond,
        &QpInputs {
            cfg: &cfg,
            reference: &reference,
            u_target: &u_target,
            u_prev: &u_prev,
            u_min: &u_min,
            u_max: &u_max,
            y_min: &y_min,
            y_max: &y_max,
            u_scale: &u_scale,
            y_scale: &y_scale,
            free: None,
        },
    )
    .unwrap();

    let diff = plan
        .u
        .iter()
        .flatten()
        .zip(direct.u.iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    (diff, plan.iterations, plan.converged)
}

