//! Dense two-phase simplex for small linear programs.
//!
//! ```text
//!   minimize    c'x
//!   subject to  A_ub x <= b_ub
//!               A_eq x  = b_eq
//!               lower <= x <= upper      (lower finite, upper may be +inf)
//! ```
//!
//! Pivoting follows Bland's rule, so the method terminates on degenerate
//! problems. Intended for problems with at most a few dozen variables.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new(c: Vec<f64>) -> Self {
        let n = c.len();
        Self {
            c,
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            ..Default::default()
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn le(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_ub.push(row);
        self.b_ub.push(rhs);
    }

    pub fn eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_eq.push(row);
        self.b_eq.push(rhs);
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        dot(&self.c, x)
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ub = self
            .a_ub
            .iter()
            .zip(&self.b_ub)
            .map(|(a, b)| (dot(a, x) - b).max(0.0));
        let eq = self
            .a_eq
            .iter()
            .zip(&self.b_eq)
            .map(|(a, b)| (dot(a, x) - b).abs());
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (lo - v).max(v - hi).max(0.0));
        ub.chain(eq).chain(bounds).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// `max(primal violation, dual infeasibility)` at the returned vertex.
    pub kkt_residual: f64,
    pub pivots: usize,
    /// Structural variables that are basic at the optimum.
    pub basic: Vec<usize>,
}

const EPS: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Tableau {
    /// `rows x (cols + 1)`, last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        self.t[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64], allowed: usize) -> Vec<f64> {
        let mut d: Vec<f64> = cost[..allowed].to_vec();
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (j, dj) in d.iter_mut().enumerate() {
                    *dj -= cb * self.t[r][j];
                }
            }
        }
        d
    }

    /// Minimizes `cost` over columns `< allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: usize, max_pivots: usize, pivots: &mut usize) -> LpStatus {
        loop {
            if *pivots >= max_pivots {
                return LpStatus::IterationLimit;
            }
            let d = self.reduced_costs(cost, allowed);
            let Some(enter) = (0..allowed).find(|&j| d[j] < -EPS && !self.basis.contains(&j)) else {
                return LpStatus::Optimal;
            };
            let rhs = self.cols;
            let mut leave: Option<(usize, f64)> = None;
            for (r, row) in self.t.iter().enumerate() {
                let a = row[enter];
                if a > EPS {
                    let ratio = row[rhs] / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - EPS
                                || (ratio <= lratio + EPS && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return LpStatus::Unbounded;
            };
            self.pivot(r, enter);
            *pivots += 1;
        }
    }
}

pub fn solve(lp: &LinearProgram) -> LpSolution {
    solve_with_limit(lp, 50_000)
}

pub fn solve_with_limit(lp: &LinearProgram, max_pivots: usize) -> LpSolution {
    let n = lp.n();
    let shift = |row: &[f64]| dot(row, &lp.lower);

    // Rows in shifted variables x' = x - lower >= 0.
    // (coefficients, rhs, has_slack)
    let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for (a, b) in lp.a_ub.iter().zip(&lp.b_ub) {
        rows.push((a.clone(), b - shift(a), true));
    }
    for (i, (&lo, &hi)) in lp.lower.iter().zip(&lp.upper).enumerate() {
        if hi.is_finite() {
            let mut a = vec![0.0; n];
            a[i] = 1.0;
            rows.push((a, hi - lo, true));
        }
    }
    for (a, b) in lp.a_eq.iter().zip(&lp.b_eq) {
        rows.push((a.clone(), b - shift(a), false));
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.2).count();
    // artificial variable for rows whose slack cannot start basic
    let needs_art: Vec<bool> = rows.iter().map(|(_, b, s)| !*s || *b < 0.0).collect();
    let n_art = needs_art.iter().filter(|&&v| v).count();
    let cols = n + n_slack + n_art;

    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let mut slack_col = n;
    let mut art_col = n + n_slack;
    for (r, (a, b, has_slack)) in rows.iter().enumerate() {
        let sign = if *b < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[r][j] = sign * a[j];
        }
        t[r][cols] = sign * b;
        if *has_slack {
            t[r][slack_col] = sign;
            if !needs_art[r] {
                basis[r] = slack_col;
            }
            slack_col += 1;
        }
        if needs_art[r] {
            t[r][art_col] = 1.0;
            basis[r] = art_col;
            art_col += 1;
        }
    }
    let mut tab = Tableau { t, basis, cols };
    let mut pivots = 0;

    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        phase1[n + n_slack..].iter_mut().for_each(|v| *v = 1.0);
        let status = tab.optimize(&phase1, cols, max_pivots, &mut pivots);
        if status == LpStatus::IterationLimit {
            return failed(lp, LpStatus::IterationLimit, pivots);
        }
        let infeas: f64 = tab
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| b >= n + n_slack)
            .map(|(r, _)| tab.t[r][cols])
            .sum();
        let scale = 1.0 + rows.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
        if infeas > 1e-9 * scale {
            return failed(lp, LpStatus::Infeasible, pivots);
        }
        // drive remaining artificials out of the basis, dropping redundant rows
        let mut r = 0;
        while r < tab.t.len() {
            if tab.basis[r] >= n + n_slack {
                match (0..n + n_slack).find(|&j| tab.t[r][j].abs() > 1e-9) {
                    Some(j) => {
                        tab.pivot(r, j);
                        r += 1;
                    }
                    None => {
                        tab.t.remove(r);
                        tab.basis.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.c);
    let status = tab.optimize(&cost, n + n_slack, max_pivots, &mut pivots);
    if status != LpStatus::Optimal {
        return failed(lp, status, pivots);
    }

    let mut x = lp.lower.clone();
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] += tab.t[r][cols];
        }
    }
    let d = tab.reduced_costs(&cost, n + n_slack);
    let cscale = 1.0 + lp.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let dual_infeas = d.iter().fold(0.0f64, |a, &v| a.max(-v)) / cscale;
    let xscale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let kkt_residual = (lp.max_violation(&x) / xscale).max(dual_infeas);
    let mut basic: Vec<usize> = tab.basis.iter().copied().filter(|&b| b < n).collect();
    basic.sort_unstable();
    LpSolution {
        status,
        objective: lp.objective(&x),
        x,
        kkt_residual,
        pivots,
        basic,
    }
}

fn failed(lp: &LinearProgram, status: LpStatus, pivots: usize) -> LpSolution {
    LpSolution {
        status,
        x: lp.lower.clone(),
        objective: f64::NAN,
        kkt_residual: f64::INFINITY,
        pivots,
        basic: Vec::new(),
    }
}
