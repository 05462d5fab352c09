//! Steady-state target optimization.
//!
//! Each cycle picks MV/CV targets minimizing `B'U + C'Y + Z'S + rho·|U - U_prev|_1`
//! over the steady-state map `Y = K·U + D`, with CV bounds softened by `S >= 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpStatus};
use crate::lpv::GainMatrix;

/// Serializes infinite bounds as `null`.
pub(crate) mod bounds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    fn read<'de, D: Deserializer<'de>>(d: D, missing: f64) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(missing)).collect())
    }

    pub mod lower {
        pub use super::serialize;
        pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            super::read(d, f64::NEG_INFINITY)
        }
    }

    pub mod upper {
        pub use super::serialize;
        pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            super::read(d, f64::INFINITY)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct SsoConfig {
    pub B: Vec<f64>,
    pub C: Vec<f64>,
    pub Z: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    #[serde(with = "bounds::lower")]
    pub y_min: Vec<f64>,
    #[serde(with = "bounds::upper")]
    pub y_max: Vec<f64>,
    /// `None` selects `1e-4 · max(max|B|, 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl SsoConfig {
    pub fn n_u(&self) -> usize {
        self.B.len()
    }

    pub fn n_y(&self) -> usize {
        self.C.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or_else(|| {
            1e-4 * self.B.iter().fold(1.0f64, |m, b| m.max(b.abs()))
        })
    }

    pub fn validate(&self) -> Vec<String> {
        let mut f = Vec::new();
        let (n_u, n_y) = (self.n_u(), self.n_y());
        if self.u_min.len() != n_u || self.u_max.len() != n_u {
            f.push(format!("u_min/u_max must have {n_u} entries"));
        }
        if self.Z.len() != n_y || self.y_min.len() != n_y || self.y_max.len() != n_y {
            f.push(format!("Z, y_min, y_max must have {n_y} entries"));
        }
        for (k, z) in self.Z.iter().enumerate() {
            if !(*z > 0.0) {
                f.push(format!("Z[{k}] = {z} must be strictly positive"));
            }
        }
        for (i, (lo, hi)) in self.u_min.iter().zip(&self.u_max).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) {
                f.push(format!("MV box {i} must be finite"));
            } else if lo > hi {
                f.push(format!("u_min[{i}] = {lo} exceeds u_max[{i}] = {hi}"));
            }
        }
        for (k, (lo, hi)) in self.y_min.iter().zip(&self.y_max).enumerate() {
            if lo > hi {
                f.push(format!("y_min[{k}] = {lo} exceeds y_max[{k}] = {hi}"));
            }
        }
        if let Some(r) = self.rho {
            if !(r >= 0.0) {
                f.push(format!("rho = {r} must be non-negative"));
            }
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsoResult {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub slack: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
    pub kkt_residual: f64,
    /// Human-readable list of bounds that hold with equality.
    pub active: Vec<String>,
}

/// `D = measured CV deviation - K · MV deviation`.
pub fn compute_bias(measured_dev: &[f64], mv_dev: &[f64], k: &GainMatrix) -> Vec<f64> {
    k.mul(mv_dev)
        .iter()
        .zip(measured_dev)
        .map(|(ku, y)| y - ku)
        .collect()
}

fn range_scale(lo: f64, hi: f64) -> f64 {
    if lo.is_finite() && hi.is_finite() && hi > lo {
        hi - lo
    } else {
        let m = [lo, hi]
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        m.max(1.0)
    }
}

/// Solves the target LP with `Y = K·U + d`; `u_prev` anchors the move penalty.
pub fn solve_sso(cfg: &SsoConfig, k: &GainMatrix, d: &[f64], u_prev: &[f64]) -> Result<SsoResult> {
    let findings = cfg.validate();
    if !findings.is_empty() {
        return Err(Error::Validation(findings));
    }
    let (n_u, n_y) = (cfg.n_u(), cfg.n_y());
    if k.n_u() != n_u || k.n_y() != n_y || d.len() != n_y || u_prev.len() != n_u {
        return Err(Error::Config(format!(
            "SSO dimensions: config {n_y}x{n_u}, gain {}x{}, bias {}, u_prev {}",
            k.n_y(),
            k.n_u(),
            d.len(),
            u_prev.len()
        )));
    }
    let rho = cfg.rho();
    let su: Vec<f64> = (0..n_u).map(|i| range_scale(cfg.u_min[i], cfg.u_max[i])).collect();
    let sy: Vec<f64> = (0..n_y).map(|k| range_scale(cfg.y_min[k], cfg.y_max[k])).collect();

    // x = [U/su, S/sy, p, m] with U - U_prev = su·(p - m)
    let use_l1 = rho > 0.0;
    let n = n_u + n_y + if use_l1 { 2 * n_u } else { 0 };
    let mut c = vec![0.0; n];
    for i in 0..n_u {
        let cy: f64 = (0..n_y).map(|kk| cfg.C[kk] * k.rows[kk][i]).sum();
        c[i] = (cfg.B[i] + cy) * su[i];
    }
    for kk in 0..n_y {
        c[n_u + kk] = cfg.Z[kk] * sy[kk];
    }
    if use_l1 {
        for i in 0..n_u {
            c[n_u + n_y + i] = rho * su[i];
            c[n_u + n_y + n_u + i] = rho * su[i];
        }
    }
    let mut prob = LinearProgram::new(c);
    for i in 0..n_u {
        prob.lower[i] = cfg.u_min[i] / su[i];
        prob.upper[i] = cfg.u_max[i] / su[i];
    }
    for kk in 0..n_y {
        let row: Vec<f64> = (0..n_u).map(|i| k.rows[kk][i] * su[i] / sy[kk]).collect();
        if cfg.y_max[kk].is_finite() {
            let mut r = vec![0.0; n];
            r[..n_u].copy_from_slice(&row);
            r[n_u + kk] = -1.0;
            prob.le(r, (cfg.y_max[kk] - d[kk]) / sy[kk]);
        }
        if cfg.y_min[kk].is_finite() {
            let mut r = vec![0.0; n];
            for i in 0..n_u {
                r[i] = -row[i];
            }
            r[n_u + kk] = -1.0;
            prob.le(r, (d[kk] - cfg.y_min[kk]) / sy[kk]);
        }
    }
    if use_l1 {
        for i in 0..n_u {
            let mut r = vec![0.0; n];
            r[i] = 1.0;
            r[n_u + n_y + i] = -1.0;
            r[n_u + n_y + n_u + i] = 1.0;
            prob.eq(r, u_prev[i] / su[i]);
        }
    }

    let sol = lp::solve(&prob);
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Unbounded => {
            return Err(Error::Config("SSO objective unbounded; check MV boxes".into()))
        }
        _ => return Err(Error::Solver(format!("SSO LP ended with {:?}", sol.status))),
    }
    let u: Vec<f64> = (0..n_u)
        .map(|i| (sol.x[i] * su[i]).clamp(cfg.u_min[i], cfg.u_max[i]))
        .collect();
    let y: Vec<f64> = k.mul(&u).iter().zip(d).map(|(a, b)| a + b).collect();
    let slack: Vec<f64> = (0..n_y)
        .map(|kk| {
            let need = (cfg.y_min[kk] - y[kk]).max(y[kk] - cfg.y_max[kk]).max(0.0);
            (sol.x[n_u + kk] * sy[kk]).max(need)
        })
        .collect();
    let l1: f64 = u.iter().zip(u_prev).map(|(a, b)| (a - b).abs()).sum();
    let objective = dot(&cfg.B, &u) + dot(&cfg.C, &y) + dot(&cfg.Z, &slack) + rho * l1;

    let mut active = Vec::new();
    for i in 0..n_u {
        let tol = 1e-9 * su[i];
        if (u[i] - cfg.u_min[i]).abs() <= tol {
            active.push(format!("u[{i}] at min"));
        } else if (u[i] - cfg.u_max[i]).abs() <= tol {
            active.push(format!("u[{i}] at max"));
        }
    }
    for kk in 0..n_y {
        let tol = 1e-9 * sy[kk];
        if slack[kk] > tol {
            active.push(format!("y[{kk}] slack {:.6}", slack[kk]));
        } else if (y[kk] - cfg.y_min[kk]).abs() <= tol {
            active.push(format!("y[{kk}] at min"));
        } else if (y[kk] - cfg.y_max[kk]).abs() <= tol {
            active.push(format!("y[{kk}] at max"));
        }
    }
    Ok(SsoResult {
        u,
        y,
        slack,
        objective,
        status: sol.status,
        kkt_residual: sol.kkt_residual,
        active,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one(b: f64, y_min: f64, u_max: f64, rho: f64) -> SsoConfig {
        SsoConfig {
            B: vec![b],
            C: vec![0.0],
            Z: vec![1.0],
            u_min: vec![0.0],
            u_max: vec![u_max],
            y_min: vec![y_min],
            y_max: vec![8.0],
            rho: Some(rho),
        }
    }

    fn gain2() -> GainMatrix {
        GainMatrix { w: 0.0, rows: vec![vec![2.0]] }
    }

    #[test]
    fn bias_arithmetic() {
        assert_eq!(compute_bias(&[2.5], &[1.0], &gain2()), vec![0.5]);
    }

    #[test]
    fn ceiling_binds() {
        let r = solve_sso(&one(-1.0, 0.0, 10.0, 0.0), &gain2(), &[0.0], &[0.0]).unwrap();
        assert_abs_diff_eq!(r.u[0], 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.y[0], 8.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.slack[0], 0.0, epsilon = 1e-9);
        assert!(r.kkt_residual < 1e-7);
    }

    #[test]
    fn infeasible_target_absorbed_by_slack() {
        let mut cfg = one(0.0, 9.0, 4.0, 0.0);
        cfg.y_max = vec![10.0];
        let r = solve_sso(&cfg, &gain2(), &[0.0], &[0.0]).unwrap();
        assert_abs_diff_eq!(r.y[0], 8.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.slack[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn move_suppression_only() {
        let mut cfg = one(0.0, 0.0, 10.0, 0.1);
        cfg.y_max = vec![f64::INFINITY];
        let r = solve_sso(&cfg, &gain2(), &[0.0], &[3.7]).unwrap();
        assert_abs_diff_eq!(r.u[0], 3.7, epsilon = 1e-12);
    }

    #[test]
    fn null_bounds_round_trip() {
        let mut cfg = one(1.0, 0.0, 1.0, 0.0);
        cfg.y_min = vec![f64::NEG_INFINITY];
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"y_min\":[null]"));
        let back: SsoConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs_itemized() {
        let mut cfg = one(1.0, 0.0, 1.0, 0.0);
        cfg.Z = vec![0.0];
        cfg.u_min = vec![2.0];
        let f = cfg.validate();
        assert_eq!(f.len(), 2, "{f:?}");
    }
}
