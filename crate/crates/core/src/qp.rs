//! Dual active-set solver (Goldfarb–Idnani) for strictly convex QPs.
//!
//! ```text
//!   minimize    ½ x'Gx + a'x
//!   subject to  C x >= b
//! ```
//!
//! The factorization `J'N = [R; 0]` of the active normals is updated with
//! Givens rotations, so each add/drop costs O(n²).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub g: DMatrix<f64>,
    pub a: DVector<f64>,
    /// One constraint per row: `c.row(j) · x >= b[j]`.
    pub c: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QuadraticProgram {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.g * x)) + self.a.dot(x)
    }

    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let s = &self.c * x - &self.b;
        s.iter().fold(0.0f64, |m, &v| m.max(-v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    /// Multipliers for every constraint (zero when inactive).
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Diagonal shift added to `G` when it was not numerically positive definite.
    pub ridge: f64,
    /// Constraint that could not be satisfied, when infeasible.
    pub blocking: Option<usize>,
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0)
    } else {
        (a / h, b / h)
    }
}

/// Rotate columns `i` and `k` of `m` so that the pair `(x_i, x_k)` maps to `(h, 0)`.
fn rotate_cols(m: &mut DMatrix<f64>, i: usize, k: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (p, q) = (m[(r, i)], m[(r, k)]);
        m[(r, i)] = c * p + s * q;
        m[(r, k)] = -s * p + c * q;
    }
}

pub fn solve(qp: &QuadraticProgram) -> QpSolution {
    solve_with_limit(qp, 20 * (qp.n() + qp.b.len()) + 100)
}

pub fn solve_with_limit(qp: &QuadraticProgram, max_iter: usize) -> QpSolution {
    let n = qp.n();
    let m = qp.b.len();
    let gscale = (0..n).fold(1.0f64, |s, i| s.max(qp.g[(i, i)].abs()));

    let mut ridge = 0.0;
    let chol = loop {
        let mut g = qp.g.clone();
        for i in 0..n {
            g[(i, i)] += ridge;
        }
        match g.cholesky() {
            Some(ch) => {
                let l = ch.l();
                let min_piv = (0..n).fold(f64::INFINITY, |s, i| s.min(l[(i, i)] * l[(i, i)]));
                if n == 0 || min_piv > 1e-12 * gscale {
                    break ch;
                }
            }
            None => {}
        }
        ridge = if ridge == 0.0 { 1e-10 * gscale } else { ridge * 100.0 };
    };
    let l = chol.l();
    // J = L^{-T}
    let mut j_mat = l
        .transpose()
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .expect("cholesky factor is nonsingular");
    let mut r_mat = DMatrix::<f64>::zeros(n, n);
    let mut x = -chol.solve(&qp.a);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];
    let row_norm: Vec<f64> = (0..m).map(|j| qp.c.row(j).norm().max(1e-300)).collect();
    let bscale = 1.0 + qp.b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let tol = 1e-11 * bscale;
    let mut iterations = 0;
    let mut status = QpStatus::Optimal;
    let mut blocking = None;

    'outer: loop {
        // most violated inactive constraint, normalized
        let s = &qp.c * &x - &qp.b;
        let mut p = None;
        let mut worst = -tol;
        for jdx in 0..m {
            if !is_active[jdx] {
                let v = s[jdx] / row_norm[jdx];
                if v < worst {
                    worst = v;
                    p = Some(jdx);
                }
            }
        }
        let Some(p) = p else { break };
        let np: DVector<f64> = qp.c.row(p).transpose();
        let mut up = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                status = QpStatus::IterationLimit;
                break 'outer;
            }
            let q = active.len();
            let d = j_mat.tr_mul(&np);
            let z = j_mat.columns(q, n - q) * d.rows(q, n - q);
            let r = if q > 0 {
                r_mat
                    .view((0, 0), (q, q))
                    .solve_upper_triangular(&d.rows(0, q).into_owned())
                    .unwrap_or_else(|| DVector::zeros(q))
            } else {
                DVector::zeros(0)
            };
            // dual step
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for k in 0..q {
                if r[k] > 0.0 {
                    let t = u[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(k);
                    }
                }
            }
            // primal step
            let zn = z.dot(&np);
            let s_p = np.dot(&x) - qp.b[p];
            let t2 = if zn.abs() <= 1e-14 * row_norm[p] * row_norm[p] {
                f64::INFINITY
            } else {
                -s_p / zn
            };
            let t = t1.min(t2);
            if t.is_infinite() {
                status = QpStatus::Infeasible;
                blocking = Some(p);
                break 'outer;
            }
            if t2.is_infinite() {
                for k in 0..q {
                    u[k] -= t * r[k];
                }
                up += t;
                drop_constraint(drop_at.unwrap(), &mut active, &mut u, &mut is_active, &mut r_mat, &mut j_mat);
                continue;
            }
            x += t * &z;
            for k in 0..q {
                u[k] -= t * r[k];
            }
            up += t;
            if t == t2 {
                // full step: add p
                let mut d = d;
                for jj in (q + 1..n).rev() {
                    let (c, sn) = givens(d[jj - 1], d[jj]);
                    if sn != 0.0 {
                        d[jj - 1] = c * d[jj - 1] + sn * d[jj];
                        d[jj] = 0.0;
                        rotate_cols(&mut j_mat, jj - 1, jj, c, sn);
                    }
                }
                for i in 0..=q {
                    r_mat[(i, q)] = d[i];
                }
                active.push(p);
                u.push(up);
                is_active[p] = true;
                continue 'outer;
            }
            drop_constraint(drop_at.unwrap(), &mut active, &mut u, &mut is_active, &mut r_mat, &mut j_mat);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (k, &c) in active.iter().enumerate() {
        multipliers[c] = u[k];
    }
    let kkt_residual = kkt_residual(qp, &x, &multipliers);
    QpSolution {
        status,
        objective: qp.objective(&x),
        x,
        multipliers,
        active,
        iterations,
        kkt_residual,
        ridge,
        blocking,
    }
}

fn drop_constraint(
    k: usize,
    active: &mut Vec<usize>,
    u: &mut Vec<f64>,
    is_active: &mut [bool],
    r_mat: &mut DMatrix<f64>,
    j_mat: &mut DMatrix<f64>,
) {
    let q = active.len();
    is_active[active[k]] = false;
    active.remove(k);
    u.remove(k);
    // shift columns of R left, leaving an upper Hessenberg block
    for col in k..q - 1 {
        for row in 0..q {
            r_mat[(row, col)] = r_mat[(row, col + 1)];
        }
    }
    for row in 0..q {
        r_mat[(row, q - 1)] = 0.0;
    }
    for col in k..q - 1 {
        let (c, s) = givens(r_mat[(col, col)], r_mat[(col + 1, col)]);
        if s == 0.0 {
            continue;
        }
        for cc in col..q - 1 {
            let (p1, p2) = (r_mat[(col, cc)], r_mat[(col + 1, cc)]);
            r_mat[(col, cc)] = c * p1 + s * p2;
            r_mat[(col + 1, cc)] = -s * p1 + c * p2;
        }
        r_mat[(col + 1, col)] = 0.0;
        rotate_cols(j_mat, col, col + 1, c, s);
    }
}

/// Scaled residual of the optimality conditions at `(x, multipliers)`.
pub fn kkt_residual(qp: &QuadraticProgram, x: &DVector<f64>, mult: &DVector<f64>) -> f64 {
    let grad = &qp.g * x + &qp.a - qp.c.tr_mul(mult);
    let gscale = 1.0
        + qp.a.amax()
        + (&qp.g * x).amax()
        + qp.c.tr_mul(mult).amax();
    let s = &qp.c * x - &qp.b;
    let xscale = 1.0 + x.amax() + qp.b.amax();
    let mut res = grad.amax() / gscale;
    for j in 0..qp.b.len() {
        res = res.max((-s[j]).max(0.0) / xscale);
        res = res.max((-mult[j]).max(0.0) / gscale);
        res = res.max((mult[j] * s[j]).abs() / (gscale * xscale));
    }
    res
}
