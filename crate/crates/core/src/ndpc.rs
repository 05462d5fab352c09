//! Lower control layer: reference trajectories, multi-step linearization
//! along the predicted working-point trajectory, and the move-plan QP.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpv::{blend, LpvModel, ModelState};
use crate::qp::{self, QpStatus, QuadraticProgram};

/// Diagonal weights, either one vector for all steps or one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diag {
    Constant(Vec<f64>),
    PerStep(Vec<Vec<f64>>),
}

impl Diag {
    /// Weight of entry `idx` at horizon step `l` (0-based).
    pub fn at(&self, l: usize, idx: usize) -> f64 {
        match self {
            Diag::Constant(v) => v[idx],
            Diag::PerStep(v) => v[l.min(v.len() - 1)][idx],
        }
    }

    fn entries(&self) -> Box<dyn Iterator<Item = &f64> + '_> {
        match self {
            Diag::Constant(v) => Box::new(v.iter()),
            Diag::PerStep(v) => Box::new(v.iter().flatten()),
        }
    }

    fn width_ok(&self, n: usize) -> bool {
        match self {
            Diag::Constant(v) => v.len() == n,
            Diag::PerStep(v) => !v.is_empty() && v.iter().all(|r| r.len() == n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// Every outer loop starts from the previous MVs held over the horizon.
    #[default]
    Repeat,
    /// Start from the previous period's plan shifted by one step.
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OnNonConvergence {
    #[default]
    ApplyLast,
    Hold,
}

/// Scenario-file section of the move-plan layer. Weights act on variables
/// normalized by their ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct NdpcConfig {
    pub P: usize,
    pub M: usize,
    pub Q: Diag,
    pub H: Diag,
    pub R: Diag,
    pub V: Diag,
    /// Reference time constants per CV, minutes.
    pub tau: Vec<f64>,
    /// Convergence tolerance per MV; defaults to `1e-3` of the MV range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_u: Option<Vec<f64>>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub du_min: Vec<f64>,
    pub du_max: Vec<f64>,
    #[serde(default)]
    pub warm_start: WarmStart,
    #[serde(default)]
    pub on_nonconvergence: OnNonConvergence,
}

fn default_max_iter() -> usize {
    10
}

impl NdpcConfig {
    pub fn validate(&self, n_u: usize, n_y: usize) -> Vec<String> {
        let mut f = Vec::new();
        if !(1 <= self.M && self.M <= self.P) {
            f.push(format!("horizons must satisfy 1 <= M <= P, got M={} P={}", self.M, self.P));
        }
        for (name, d, n) in [("Q", &self.Q, n_y), ("H", &self.H, n_y), ("R", &self.R, n_u), ("V", &self.V, n_u)] {
            if !d.width_ok(n) {
                f.push(format!("{name} must have {n} entries per step"));
            } else if d.entries().any(|v| !(*v >= 0.0)) {
                f.push(format!("{name} entries must be non-negative"));
            }
        }
        if self.H.entries().any(|v| !(*v > 0.0)) {
            f.push("H entries must be strictly positive".into());
        }
        if self.tau.len() != n_y || self.tau.iter().any(|t| !(*t > 0.0)) {
            f.push(format!("tau must have {n_y} strictly positive entries"));
        }
        if self.du_min.len() != n_u || self.du_max.len() != n_u {
            f.push(format!("du_min/du_max must have {n_u} entries"));
        } else {
            for i in 0..n_u {
                if !(self.du_min[i] <= 0.0 && 0.0 <= self.du_max[i]) {
                    f.push(format!("rate limits of MV {i} must bracket zero"));
                }
            }
        }
        if let Some(t) = &self.tol_u {
            if t.len() != n_u || t.iter().any(|v| !(*v > 0.0)) {
                f.push(format!("tol_u must have {n_u} strictly positive entries"));
            }
        }
        if self.max_iter == 0 {
            f.push("max_iter must be at least 1".into());
        }
        f
    }
}

/// `y_ref(l) = y + (y* - y)(1 - exp(-l·T/tau))` for `l = 1..=P`; returned as `[l-1][k]`.
pub fn build_reference(y_now: &[f64], y_target: &[f64], tau: &[f64], period: f64, p: usize) -> Vec<Vec<f64>> {
    (1..=p)
        .map(|l| {
            y_now
                .iter()
                .zip(y_target)
                .zip(tau)
                .map(|((y, ys), t)| y + (ys - y) * (1.0 - (-(l as f64) * period / t).exp()))
                .collect()
        })
        .collect()
}

/// What the controller knows at the start of a period.
#[derive(Debug, Clone)]
pub struct ControllerView<'a> {
    pub model: &'a LpvModel,
    pub base_mv: &'a [f64],
    pub base_cv: &'a [f64],
    /// Internal-model channel memory after the previous move was applied.
    pub channels: &'a ModelState,
    /// Measured minus internal-model CVs.
    pub bias: &'a [f64],
    /// Measured CVs (as seen by the controller).
    pub y_now: &'a [f64],
    pub u_prev: &'a [f64],
    pub w_init: f64,
    /// MVs whose channels the prediction model sees; `None` means all.
    pub visible: Option<&'a [bool]>,
    /// MVs the controller may move; `None` means all.
    pub free: Option<&'a [bool]>,
}

impl ControllerView<'_> {
    fn is_free(&self, i: usize) -> bool {
        self.free.is_none_or(|f| f[i])
    }

    fn is_visible(&self, i: usize) -> bool {
        self.visible.is_none_or(|v| v[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Frozen weights `[l-1][k][j]` used for step `l`.
    pub weights: Vec<Vec<Vec<f64>>>,
    /// Predicted CVs `[l-1][k]`.
    pub y: Vec<Vec<f64>>,
    /// Working point before each step: `w[0] = w_init`, `w[l] = w(t+l)`.
    pub w: Vec<f64>,
    /// Some working point left the weighting range and was clamped.
    pub clamped: bool,
}

/// Recursively simulates the plan (`[m][i]`, absolute MVs, held after `M`),
/// re-freezing the weights at each predicted working point.
pub fn predict_multistep(view: &ControllerView, plan: &[Vec<f64>], p: usize) -> Prediction {
    let model = view.model;
    let mut st = view.channels.clone();
    let mut w = view.w_init;
    let mut out = Prediction {
        weights: Vec::with_capacity(p),
        y: Vec::with_capacity(p),
        w: vec![w],
        clamped: false,
    };
    let wp = model.working_point_cv;
    for l in 0..p {
        let u = &plan[l.min(plan.len() - 1)];
        let dev: Vec<f64> = u.iter().zip(view.base_mv).map(|(a, b)| a - b).collect();
        st.step(model, &dev);
        let (alpha, clamped) = model.weights_clamped(w);
        out.clamped |= clamped;
        let local = st.local_outputs_with(view.visible, None);
        let y: Vec<f64> = blend(&local, &alpha)
            .iter()
            .zip(view.base_cv)
            .zip(view.bias)
            .map(|((v, b), d)| v + b + d)
            .collect();
        w = y[wp];
        out.weights.push(alpha);
        out.y.push(y);
        out.w.push(w);
    }
    out
}

/// Step responses `[j][k][i][n-1]` of every channel for `n = 1..=P`.
#[derive(Debug, Clone)]
pub struct StepTable {
    pub p: usize,
    table: Vec<Vec<Vec<Vec<f64>>>>,
}

impl StepTable {
    pub fn new(model: &LpvModel, p: usize) -> Self {
        let table = model
            .local
            .iter()
            .map(|set| {
                set.channels
                    .iter()
                    .map(|row| row.iter().map(|tf| tf.step_response(p)).collect())
                    .collect()
            })
            .collect();
        Self { p, table }
    }

    /// Response after `n >= 1` steps.
    pub fn at(&self, j: usize, k: usize, i: usize, n: usize) -> f64 {
        self.table[j][k][i][n - 1]
    }
}

/// Affine prediction `Y = y0 + S·ΔU` for fixed weights.
///
/// `y0` is indexed `l·n_y + k` (steps `l = 0..P` meaning `t+1..t+P`);
/// columns of `sens` are `m·n_u + i`.
#[derive(Debug, Clone)]
pub struct Condensed {
    pub p: usize,
    pub m: usize,
    pub n_y: usize,
    pub n_u: usize,
    pub y0: DVector<f64>,
    pub sens: DMatrix<f64>,
}

/// Linearizes the prediction around "hold `u_prev`" under the frozen weights.
pub fn condense(view: &ControllerView, steps: &StepTable, weights: &[Vec<Vec<f64>>], m: usize) -> Condensed {
    let model = view.model;
    let (n_y, n_u, n_w) = (model.n_y(), model.n_u(), model.n_w());
    let p = weights.len();
    // free response: same frozen weights, plan held at u_prev
    let mut st = view.channels.clone();
    let dev: Vec<f64> = view.u_prev.iter().zip(view.base_mv).map(|(a, b)| a - b).collect();
    let mut y0 = DVector::zeros(p * n_y);
    for l in 0..p {
        st.step(model, &dev);
        let local = st.local_outputs_with(view.visible, None);
        let y = blend(&local, &weights[l]);
        for k in 0..n_y {
            y0[l * n_y + k] = y[k] + view.base_cv[k] + view.bias[k];
        }
    }
    let mut sens = DMatrix::zeros(p * n_y, m * n_u);
    for l in 0..p {
        for k in 0..n_y {
            for mm in 0..m.min(l + 1) {
                let n = l + 1 - mm;
                for i in 0..n_u {
                    if !view.is_visible(i) {
                        continue;
                    }
                    let s: f64 = (0..n_w).map(|j| weights[l][k][j] * steps.at(j, k, i, n)).sum();
                    sens[(l * n_y + k, mm * n_u + i)] = s;
                }
            }
        }
    }
    Condensed { p, m, n_y, n_u, y0, sens }
}

/// Everything the QP needs besides the prediction.
#[derive(Debug, Clone)]
pub struct QpInputs<'a> {
    pub cfg: &'a NdpcConfig,
    /// `[l-1][k]`
    pub reference: &'a [Vec<f64>],
    pub u_target: &'a [f64],
    pub u_prev: &'a [f64],
    pub u_min: &'a [f64],
    pub u_max: &'a [f64],
    pub y_min: &'a [f64],
    pub y_max: &'a [f64],
    /// Normalizing ranges of MVs and CVs.
    pub u_scale: &'a [f64],
    pub y_scale: &'a [f64],
    pub free: Option<&'a [bool]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpDiagnostics {
    pub status: QpStatus,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub ridge: f64,
    pub active: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpOutcome {
    /// `[m][i]`
    pub du: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// `[l-1][k]`
    pub y: Vec<Vec<f64>>,
    pub slack: Vec<Vec<f64>>,
    pub diagnostics: QpDiagnostics,
}

/// Value of the move-plan objective for a given move sequence and slacks.
pub fn plan_objective(c: &Condensed, inp: &QpInputs, du: &[Vec<f64>], slack: &[Vec<f64>]) -> f64 {
    let cfg = inp.cfg;
    let (n_y, n_u) = (c.n_y, c.n_u);
    let flat: DVector<f64> = DVector::from_iterator(c.m * n_u, du.iter().flatten().copied());
    let y = &c.y0 + &c.sens * flat;
    let mut j = 0.0;
    for l in 0..c.p {
        for k in 0..n_y {
            let e = (y[l * n_y + k] - inp.reference[l][k]) / inp.y_scale[k];
            j += cfg.Q.at(l, k) * e * e;
            let s = slack[l][k] / inp.y_scale[k];
            j += cfg.H.at(l, k) * s * s;
        }
    }
    let mut u = inp.u_prev.to_vec();
    for m in 0..c.m {
        for i in 0..n_u {
            u[i] += du[m][i];
            let d = du[m][i] / inp.u_scale[i];
            let v = (u[i] - inp.u_target[i]) / inp.u_scale[i];
            j += cfg.R.at(m, i) * d * d + cfg.V.at(m, i) * v * v;
        }
    }
    j
}

/// Solves the condensed move-plan QP.
pub fn solve_qp(c: &Condensed, inp: &QpInputs) -> Result<QpOutcome> {
    let cfg = inp.cfg;
    let (p, m, n_y, n_u) = (c.p, c.m, c.n_y, c.n_u);
    let free: Vec<usize> = (0..n_u).filter(|&i| inp.free.is_none_or(|f| f[i])).collect();
    let nf = free.len();
    let bounded: Vec<usize> = (0..n_y)
        .filter(|&k| inp.y_min[k].is_finite() || inp.y_max[k].is_finite())
        .collect();
    let nb = bounded.len();
    let nd = m * nf;
    let nx = nd + p * nb;
    let su: Vec<f64> = free.iter().map(|&i| inp.u_scale[i]).collect();

    // scaled output map: Y/sy = y0s + Ay·x
    let mut ay = DMatrix::zeros(p * n_y, nd);
    let mut y0s = DVector::zeros(p * n_y);
    for l in 0..p {
        for k in 0..n_y {
            let r = l * n_y + k;
            y0s[r] = c.y0[r] / inp.y_scale[k];
            for mm in 0..m {
                for (f, &i) in free.iter().enumerate() {
                    ay[(r, mm * nf + f)] = c.sens[(r, mm * n_u + i)] * su[f] / inp.y_scale[k];
                }
            }
        }
    }

    let mut g = DMatrix::zeros(nx, nx);
    let mut a = DVector::zeros(nx);
    {
        let mut wq = DVector::zeros(p * n_y);
        let mut resid = DVector::zeros(p * n_y);
        for l in 0..p {
            for k in 0..n_y {
                wq[l * n_y + k] = cfg.Q.at(l, k);
                resid[l * n_y + k] = y0s[l * n_y + k] - inp.reference[l][k] / inp.y_scale[k];
            }
        }
        let qa = DMatrix::from_diagonal(&wq) * &ay;
        let gq = ay.tr_mul(&qa) * 2.0;
        g.view_mut((0, 0), (nd, nd)).copy_from(&gq);
        let aq = qa.tr_mul(&resid) * 2.0;
        a.rows_mut(0, nd).copy_from(&aq);
    }
    for mm in 0..m {
        for (f, &i) in free.iter().enumerate() {
            let idx = mm * nf + f;
            g[(idx, idx)] += 2.0 * cfg.R.at(mm, i);
            // V on cumulative sums
            let cv = (inp.u_prev[i] - inp.u_target[i]) / su[f];
            let v = cfg.V.at(mm, i);
            if v != 0.0 {
                for a1 in 0..=mm {
                    a[a1 * nf + f] += 2.0 * v * cv;
                    for a2 in 0..=mm {
                        g[(a1 * nf + f, a2 * nf + f)] += 2.0 * v;
                    }
                }
            }
        }
    }
    for l in 0..p {
        for (b, &k) in bounded.iter().enumerate() {
            let idx = nd + l * nb + b;
            g[(idx, idx)] += 2.0 * cfg.H.at(l, k);
        }
    }

    // constraints, C x >= b
    let mut rows: Vec<(Vec<(usize, f64)>, f64, String)> = Vec::new();
    for mm in 0..m {
        for (f, &i) in free.iter().enumerate() {
            let idx = mm * nf + f;
            if cfg.du_min[i].is_finite() {
                rows.push((vec![(idx, 1.0)], cfg.du_min[i] / su[f], format!("du[{mm}][{i}] >= min")));
            }
            if cfg.du_max[i].is_finite() {
                rows.push((vec![(idx, -1.0)], -cfg.du_max[i] / su[f], format!("du[{mm}][{i}] <= max")));
            }
            let cum: Vec<(usize, f64)> = (0..=mm).map(|a1| (a1 * nf + f, 1.0)).collect();
            let neg: Vec<(usize, f64)> = cum.iter().map(|&(c_, v)| (c_, -v)).collect();
            if inp.u_min[i].is_finite() {
                rows.push((cum, (inp.u_min[i] - inp.u_prev[i]) / su[f], format!("u[{mm}][{i}] >= min")));
            }
            if inp.u_max[i].is_finite() {
                rows.push((neg, -(inp.u_max[i] - inp.u_prev[i]) / su[f], format!("u[{mm}][{i}] <= max")));
            }
        }
    }
    let hard_rows = rows.len();
    let mut soft: Vec<(usize, usize, Vec<f64>, f64, String)> = Vec::new();
    for l in 0..p {
        for (b, &k) in bounded.iter().enumerate() {
            let r = l * n_y + k;
            let e = nd + l * nb + b;
            let row: Vec<f64> = (0..nd).map(|c_| ay[(r, c_)]).collect();
            if inp.y_max[k].is_finite() {
                // e - Ay x >= y0s - ymax
                let coeffs = row.iter().map(|v| -v).collect();
                soft.push((e, r, coeffs, y0s[r] - inp.y_max[k] / inp.y_scale[k], format!("y[{l}][{k}] <= max")));
            }
            if inp.y_min[k].is_finite() {
                soft.push((e, r, row.clone(), inp.y_min[k] / inp.y_scale[k] - y0s[r], format!("y[{l}][{k}] >= min")));
            }
        }
    }
    let n_con = rows.len() + soft.len();
    let mut cm = DMatrix::zeros(n_con, nx);
    let mut bv = DVector::zeros(n_con);
    let mut labels = Vec::with_capacity(n_con);
    for (r, (coeffs, rhs, label)) in rows.into_iter().enumerate() {
        for (c_, v) in coeffs {
            cm[(r, c_)] = v;
        }
        bv[r] = rhs;
        labels.push(label);
    }
    for (s, (e, _, coeffs, rhs, label)) in soft.into_iter().enumerate() {
        let r = hard_rows + s;
        for (c_, v) in coeffs.into_iter().enumerate() {
            cm[(r, c_)] = v;
        }
        cm[(r, e)] = 1.0;
        bv[r] = rhs;
        labels.push(label);
    }

    let sol = qp::solve(&QuadraticProgram { g, a, c: cm, b: bv });
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            let what = sol.blocking.map(|b| labels[b].clone()).unwrap_or_default();
            return Err(Error::Infeasible(format!("move-plan QP: {what}")));
        }
        QpStatus::IterationLimit => {
            return Err(Error::Solver(format!(
                "move-plan QP hit its iteration limit (ridge {:e})",
                sol.ridge
            )))
        }
    }

    // recover physical moves; clip rounding so hard limits hold exactly
    let mut du = vec![vec![0.0; n_u]; m];
    let mut u = vec![vec![0.0; n_u]; m];
    let mut last = inp.u_prev.to_vec();
    for mm in 0..m {
        for i in 0..n_u {
            let mut d = 0.0;
            if let Some(f) = free.iter().position(|&x| x == i) {
                d = (sol.x[mm * nf + f] * su[f]).clamp(cfg.du_min[i], cfg.du_max[i]);
            }
            let next = (last[i] + d).clamp(inp.u_min[i].min(last[i]), inp.u_max[i].max(last[i]));
            du[mm][i] = next - last[i];
            u[mm][i] = next;
            last[i] = next;
        }
    }
    let flat = DVector::from_iterator(m * n_u, du.iter().flatten().copied());
    let yv = &c.y0 + &c.sens * flat;
    let mut y = vec![vec![0.0; n_y]; p];
    let mut slack = vec![vec![0.0; n_y]; p];
    for l in 0..p {
        for k in 0..n_y {
            let v = yv[l * n_y + k];
            y[l][k] = v;
            if let Some(b) = bounded.iter().position(|&x| x == k) {
                let need = (inp.y_min[k] - v).max(v - inp.y_max[k]).max(0.0);
                slack[l][k] = (sol.x[nd + l * nb + b] * inp.y_scale[k]).max(need);
            }
        }
    }
    let objective = plan_objective(c, inp, &du, &slack);
    let active = sol.active.iter().map(|&i| labels[i].clone()).collect();
    Ok(QpOutcome {
        du,
        u,
        y,
        slack,
        diagnostics: QpDiagnostics {
            status: sol.status,
            objective,
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
            ridge: sol.ridge,
            active,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovePlan {
    /// `[m][i]`, absolute MVs.
    pub u: Vec<Vec<f64>>,
    pub du: Vec<Vec<f64>>,
    /// `[l-1][k]`
    pub y: Vec<Vec<f64>>,
    pub slack: Vec<Vec<f64>>,
    /// `w[0] = w_init`, `w[l]` the predicted working point after step `l`.
    pub w: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub weights_clamped: bool,
    pub qp: QpDiagnostics,
}

impl MovePlan {
    pub fn first_move(&self) -> &[f64] {
        &self.u[0]
    }
}

/// Limits and scaling shared by every outer iteration.
#[derive(Debug, Clone)]
pub struct PlanLimits<'a> {
    pub u_min: &'a [f64],
    pub u_max: &'a [f64],
    pub y_min: &'a [f64],
    pub y_max: &'a [f64],
    pub u_scale: &'a [f64],
    pub y_scale: &'a [f64],
    pub period: f64,
}

/// Outer loop: predict along the current plan, freeze, solve, repeat until
/// the plan stops moving.
pub fn iterate_ndpc(
    view: &ControllerView,
    steps: &StepTable,
    cfg: &NdpcConfig,
    y_target: &[f64],
    u_target: &[f64],
    limits: &PlanLimits,
    warm: Option<&[Vec<f64>]>,
) -> Result<MovePlan> {
    let model = view.model;
    let n_u = model.n_u();
    let findings = cfg.validate(n_u, model.n_y());
    if !findings.is_empty() {
        return Err(Error::Validation(findings));
    }
    if steps.p < cfg.P {
        return Err(Error::Config("step table shorter than the prediction horizon".into()));
    }
    let tol: Vec<f64> = cfg
        .tol_u
        .clone()
        .unwrap_or_else(|| limits.u_scale.iter().map(|s| 1e-3 * s).collect());
    let reference = build_reference(view.y_now, y_target, &cfg.tau, limits.period, cfg.P);
    let mut plan: Vec<Vec<f64>> = match (cfg.warm_start, warm) {
        (WarmStart::Shifted, Some(prev)) if !prev.is_empty() => (0..cfg.M)
            .map(|m| {
                let src = &prev[(m + 1).min(prev.len() - 1)];
                (0..n_u)
                    .map(|i| if view.is_free(i) { src[i] } else { view.u_prev[i] })
                    .collect()
            })
            .collect(),
        _ => vec![view.u_prev.to_vec(); cfg.M],
    };
    let inputs = QpInputs {
        cfg,
        reference: &reference,
        u_target,
        u_prev: view.u_prev,
        u_min: limits.u_min,
        u_max: limits.u_max,
        y_min: limits.y_min,
        y_max: limits.y_max,
        u_scale: limits.u_scale,
        y_scale: limits.y_scale,
        free: view.free,
    };
    let mut iterations = 0;
    let mut converged = false;
    let mut last: Option<QpOutcome> = None;
    while iterations < cfg.max_iter {
        iterations += 1;
        let pred = predict_multistep(view, &plan, cfg.P);
        let cond = condense(view, steps, &pred.weights, cfg.M);
        let out = solve_qp(&cond, &inputs)?;
        let change = out
            .u
            .iter()
            .zip(&plan)
            .flat_map(|(a, b)| a.iter().zip(b).zip(&tol).map(|((x, y), t)| (x - y).abs() / t))
            .fold(0.0f64, f64::max);
        plan = out.u.clone();
        last = Some(out);
        if change < 1.0 {
            converged = true;
            break;
        }
    }
    let out = last.expect("at least one iteration");
    let pred = predict_multistep(view, &out.u, cfg.P);
    Ok(MovePlan {
        u: out.u,
        du: out.du,
        y: out.y,
        slack: out.slack,
        w: pred.w,
        iterations,
        converged,
        weights_clamped: pred.clamped,
        qp: out.diagnostics,
    })
}
