#![allow(dead_code)]

pub mod control;

use std::path::PathBuf;

use dlc_core::config::ModelConfig;
use dlc_core::impc::ControllerConfig;
use dlc_core::lp::LinearProgram;
use dlc_core::plant::Plant;
use dlc_core::qp::QuadraticProgram;
use dlc_core::scenario::ScenarioConfig;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn repo() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

pub fn reference_config() -> ModelConfig {
    ModelConfig::load(repo().join("configs/reference_asp.json")).unwrap()
}

pub fn reference_plant() -> Plant {
    Plant::from_config(&reference_config()).unwrap()
}

pub fn reference_controller() -> ControllerConfig {
    let text = std::fs::read_to_string(repo().join("configs/reference_controller.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(repo().join("scenarios").join(format!("{name}.json"))).unwrap()
}

pub const KNOTS: [f64; 4] = [18000.0, 19000.0, 20000.0, 21000.0];

pub fn dlc_tasks() -> Vec<(u32, u32)> {
    let mut v = Vec::new();
    for a in KNOTS {
        for b in KNOTS {
            if a != b {
                v.push((a as u32, b as u32));
            }
        }
    }
    v
}

/// Natural cubic spline through `(x, y)` evaluated at `t`, by the
/// tridiagonal moment equations solved with the Thomas algorithm.
pub fn natural_spline(x: &[f64], y: &[f64], t: f64) -> f64 {
    let n = x.len();
    if n == 1 {
        return y[0];
    }
    if n == 2 {
        let s = (t - x[0]) / (x[1] - x[0]);
        return y[0] + s * (y[1] - y[0]);
    }
    let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
    // interior moments M_1..M_{n-2}; M_0 = M_{n-1} = 0
    let m = n - 2;
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for r in 0..m {
        let i = r + 1;
        sub[r] = h[i - 1];
        diag[r] = 2.0 * (h[i - 1] + h[i]);
        sup[r] = h[i];
        rhs[r] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
    }
    for r in 1..m {
        let f = sub[r] / diag[r - 1];
        diag[r] -= f * sup[r - 1];
        rhs[r] -= f * rhs[r - 1];
    }
    let mut mom = vec![0.0; n];
    for r in (0..m).rev() {
        let next = if r + 1 < m { mom[r + 2] } else { 0.0 };
        mom[r + 1] = (rhs[r] - sup[r] * next) / diag[r];
    }
    // straight-line extension past the end knots
    if t < x[0] {
        let slope = (y[1] - y[0]) / h[0] - h[0] * (2.0 * mom[0] + mom[1]) / 6.0;
        return y[0] + slope * (t - x[0]);
    }
    if t > x[n - 1] {
        let i = n - 2;
        let slope = (y[i + 1] - y[i]) / h[i] + h[i] * (2.0 * mom[i + 1] + mom[i]) / 6.0;
        return y[n - 1] + slope * (t - x[n - 1]);
    }
    let i = (0..n - 1).find(|&i| t <= x[i + 1]).unwrap_or(n - 2);
    let (a, b) = (x[i + 1] - t, t - x[i]);
    mom[i] * a.powi(3) / (6.0 * h[i])
        + mom[i + 1] * b.powi(3) / (6.0 * h[i])
        + (y[i] / h[i] - mom[i] * h[i] / 6.0) * a
        + (y[i + 1] / h[i] - mom[i + 1] * h[i] / 6.0) * b
}

/// Weight of every knot at `w`: the spline through that knot's indicator.
pub fn spline_weights(knots: &[f64], w: f64) -> Vec<f64> {
    (0..knots.len())
        .map(|j| {
            let ind: Vec<f64> = (0..knots.len()).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
            natural_spline(knots, &ind, w)
        })
        .collect()
}

fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, k, &mut Vec::new(), &mut out);
    out
}

/// Optimal objective of a bounded LP by enumerating every vertex.
/// `None` when no vertex is feasible.
pub fn lp_vertex_oracle(lp: &LinearProgram) -> Option<f64> {
    let n = lp.n();
    // every constraint as a row `g x <= h`; equalities are always active
    let mut rows: Vec<(Vec<f64>, f64)> = lp.a_ub.iter().cloned().zip(lp.b_ub.iter().copied()).collect();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        rows.push((e.clone(), lp.upper[i]));
        e[i] = -1.0;
        rows.push((e, -lp.lower[i]));
    }
    let n_eq = lp.a_eq.len();
    let free = n.checked_sub(n_eq)?;
    let mut best: Option<f64> = None;
    for set in combinations(rows.len(), free) {
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for (r, row) in lp.a_eq.iter().enumerate() {
            for c in 0..n {
                a[(r, c)] = row[c];
            }
            b[r] = lp.b_eq[r];
        }
        for (r, &idx) in set.iter().enumerate() {
            for c in 0..n {
                a[(n_eq + r, c)] = rows[idx].0[c];
            }
            b[n_eq + r] = rows[idx].1;
        }
        let lu = a.clone().full_piv_lu();
        if lu.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(x) = lu.solve(&b) else { continue };
        let x: Vec<f64> = x.iter().copied().collect();
        if lp.max_violation(&x) > 1e-9 {
            continue;
        }
        let f = lp.objective(&x);
        if best.is_none_or(|b| f < b) {
            best = Some(f);
        }
    }
    best
}

/// Bounded random LP with `n <= 3` variables.
pub fn random_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.gen_range(1..=3);
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let mut lp = LinearProgram::new(c);
    for i in 0..n {
        lp.lower[i] = rng.gen_range(-5.0..0.0);
        lp.upper[i] = rng.gen_range(0.5..6.0);
    }
    for _ in 0..rng.gen_range(0..=4) {
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let rhs = rng.gen_range(-1.0..6.0);
        lp.le(row, rhs);
    }
    if n > 1 && rng.gen_bool(0.3) {
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        lp.eq(row, rng.gen_range(-1.0..1.0));
    }
    lp
}

/// Optimal objective of a strictly convex QP by enumerating active sets.
/// Each candidate is solved by eliminating its equality rows (null-space
/// method) and accepted when primal feasible with non-negative
/// multipliers.
pub fn qp_oracle(qp: &QuadraticProgram) -> Option<f64> {
    let n = qp.n();
    let m = qp.c.nrows();
    let mut best: Option<f64> = None;
    for k in 0..=n.min(m) {
        for set in combinations(m, k) {
            let Some((x, lambda)) = equality_qp(qp, &set) else { continue };
            if qp.max_violation(&x) > 1e-9 || lambda.iter().any(|&l| l < -1e-9) {
                continue;
            }
            let f = qp.objective(&x);
            if best.is_none_or(|b| f < b) {
                best = Some(f);
            }
        }
    }
    best
}

/// `min ½x'Gx + a'x` s.t. `A x = b` for the rows in `set`.
fn equality_qp(qp: &QuadraticProgram, set: &[usize]) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = qp.n();
    let k = set.len();
    if k == 0 {
        let x = qp.g.clone().cholesky()?.solve(&(-&qp.a));
        return Some((x, Vec::new()));
    }
    let a = DMatrix::from_fn(k, n, |r, c| qp.c[(set[r], c)]);
    let b = DVector::from_fn(k, |r, _| qp.b[set[r]]);
    // A' = Y R with orthonormal Y; Z completes Y to a basis
    let qr = a.transpose().qr();
    let (y, r) = (qr.q(), qr.r());
    if r.diagonal().iter().any(|d| d.abs() < 1e-10) {
        return None;
    }
    let mut basis: Vec<DVector<f64>> = (0..k).map(|c| y.column(c).into_owned()).collect();
    for e in 0..n {
        let mut v = DVector::zeros(n);
        v[e] = 1.0;
        for c in &basis {
            let d = c.dot(&v);
            v -= c * d;
        }
        if v.norm() > 1e-8 {
            basis.push(v.normalize());
        }
    }
    // A x = b with x = Y p + Z s: R' p = b
    let p = r.transpose().solve_lower_triangular(&b)?;
    let xy = &y * &p;
    let x = if n > k {
        let z = DMatrix::from_columns(&basis[k..]);
        let zgz = z.transpose() * &qp.g * &z;
        let rhs = -(z.transpose() * (&qp.g * &xy + &qp.a));
        let s = zgz.cholesky()?.solve(&rhs);
        &xy + &z * s
    } else {
        xy
    };
    // gradient = A' lambda
    let grad = &qp.g * &x + &qp.a;
    let lambda = r.solve_upper_triangular(&(y.transpose() * grad))?;
    Some((x, lambda.iter().copied().collect()))
}

/// Strictly convex random QP with `n <= 4` variables and `m <= 6` rows.
pub fn random_qp(rng: &mut ChaCha8Rng) -> QuadraticProgram {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(0..=6);
    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let g = &l * l.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.1..2.0);
    let a = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let c = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-2.0..2.0));
    // keep the origin's neighbourhood feasible most of the time
    let b = DVector::from_fn(m, |_, _| rng.gen_range(-3.0..0.5));
    QuadraticProgram { g, a, c, b }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
