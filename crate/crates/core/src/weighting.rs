//! Scheduling weights over the working-point variable.
//!
//! Each weight `alpha^j(w)` interpolates the indicator data `{(w_i, delta_ij)}`.
//! Interpolation is linear in the data, so the weights of all working points
//! sum to the interpolant of the constant 1, which is 1 again; the pointwise
//! renormalization only removes rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    #[default]
    NaturalCubicSpline,
    PiecewiseLinear,
}

/// Interpolation basis for one output.
#[derive(Debug, Clone, PartialEq)]
struct Basis {
    kind: WeightKind,
    /// `second[j][i]`: second derivative at knot `i` of the spline through
    /// the indicator of knot `j`.
    second: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightingScheme {
    knots: Vec<f64>,
    w_min: f64,
    w_max: f64,
    per_output: Vec<Basis>,
}

impl WeightingScheme {
    /// `kinds[k]` selects the interpolant of output `k`.
    pub fn new(knots: Vec<f64>, w_min: f64, w_max: f64, kinds: &[WeightKind]) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Config("at least one working point is required".into()));
        }
        if knots.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config(format!(
                "working points must be strictly increasing: {knots:?}"
            )));
        }
        if !(w_min <= knots[0] && knots[knots.len() - 1] <= w_max) {
            return Err(Error::Config(format!(
                "working points {knots:?} must lie within [{w_min}, {w_max}]"
            )));
        }
        let per_output = kinds
            .iter()
            .map(|&kind| Basis {
                kind,
                second: (0..knots.len())
                    .map(|j| match kind {
                        WeightKind::NaturalCubicSpline => natural_second_derivatives(&knots, j),
                        WeightKind::PiecewiseLinear => vec![0.0; knots.len()],
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            knots,
            w_min,
            w_max,
            per_output,
        })
    }

    pub fn shared(knots: Vec<f64>, w_min: f64, w_max: f64, n_y: usize) -> Result<Self> {
        Self::new(knots, w_min, w_max, &vec![WeightKind::NaturalCubicSpline; n_y])
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_w(&self) -> usize {
        self.knots.len()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.w_min, self.w_max)
    }

    pub fn kind(&self, k: usize) -> WeightKind {
        self.per_output[k].kind
    }

    pub fn clamp(&self, w: f64) -> (f64, bool) {
        let c = w.clamp(self.w_min, self.w_max);
        (c, c != w)
    }

    /// Weights of output `k` at `w`; errors outside `[w_min, w_max]`.
    pub fn evaluate(&self, k: usize, w: f64) -> Result<Vec<f64>> {
        if !(self.w_min..=self.w_max).contains(&w) {
            return Err(Error::OutOfRange {
                what: "working point w".into(),
                value: w,
                min: self.w_min,
                max: self.w_max,
            });
        }
        Ok(self.evaluate_unchecked(k, w))
    }

    /// Weights after clamping `w` into range; the flag reports whether
    /// clamping happened.
    pub fn evaluate_clamped(&self, k: usize, w: f64) -> (Vec<f64>, bool) {
        let (c, clamped) = self.clamp(w);
        (self.evaluate_unchecked(k, c), clamped)
    }

    fn evaluate_unchecked(&self, k: usize, w: f64) -> Vec<f64> {
        let n = self.knots.len();
        if n == 1 {
            return vec![1.0];
        }
        let basis = &self.per_output[k];
        let mut out: Vec<f64> = (0..n)
            .map(|j| interpolate(&self.knots, j, &basis.second[j], w))
            .collect();
        let sum: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= sum);
        out
    }
}

/// Tridiagonal solve for the natural spline through the indicator of knot `j`.
fn natural_second_derivatives(x: &[f64], j: usize) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let y = |i: usize| if i == j { 1.0 } else { 0.0 };
    let h: Vec<f64> = x.windows(2).map(|p| p[1] - p[0]).collect();
    // interior unknowns m[1..n-1]
    let size = n - 2;
    let mut diag = vec![0.0; size];
    let mut upper = vec![0.0; size];
    let mut lower = vec![0.0; size];
    let mut rhs = vec![0.0; size];
    for r in 0..size {
        let i = r + 1;
        lower[r] = h[i - 1];
        diag[r] = 2.0 * (h[i - 1] + h[i]);
        upper[r] = h[i];
        rhs[r] = 6.0 * ((y(i + 1) - y(i)) / h[i] - (y(i) - y(i - 1)) / h[i - 1]);
    }
    // Thomas algorithm
    for r in 1..size {
        let f = lower[r] / diag[r - 1];
        diag[r] -= f * upper[r - 1];
        rhs[r] -= f * rhs[r - 1];
    }
    let mut sol = vec![0.0; size];
    sol[size - 1] = rhs[size - 1] / diag[size - 1];
    for r in (0..size - 1).rev() {
        sol[r] = (rhs[r] - upper[r] * sol[r + 1]) / diag[r];
    }
    m[1..n - 1].copy_from_slice(&sol);
    m
}

fn interpolate(x: &[f64], j: usize, m: &[f64], w: f64) -> f64 {
    let n = x.len();
    let y = |i: usize| if i == j { 1.0 } else { 0.0 };
    let slope = |i: usize, at_right: bool| {
        let h = x[i + 1] - x[i];
        let base = (y(i + 1) - y(i)) / h;
        if at_right {
            base + h * (2.0 * m[i + 1] + m[i]) / 6.0
        } else {
            base - h * (2.0 * m[i] + m[i + 1]) / 6.0
        }
    };
    // linear extension beyond the outer knots (second derivative is zero there)
    if w <= x[0] {
        return y(0) + slope(0, false) * (w - x[0]);
    }
    if w >= x[n - 1] {
        return y(n - 1) + slope(n - 2, true) * (w - x[n - 1]);
    }
    let i = match x.partition_point(|&v| v <= w) {
        0 => 0,
        p => (p - 1).min(n - 2),
    };
    let h = x[i + 1] - x[i];
    let a = (x[i + 1] - w) / h;
    let b = (w - x[i]) / h;
    a * y(i) + b * y(i + 1) + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scheme() -> WeightingScheme {
        WeightingScheme::shared(vec![18000.0, 19000.0, 20000.0, 21000.0], 17500.0, 21500.0, 2)
            .unwrap()
    }

    #[test]
    fn knot_values() {
        let s = scheme();
        assert_eq!(s.evaluate(0, 19000.0).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.evaluate(1, 18000.0).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn out_of_range() {
        let err = scheme().evaluate(0, 17000.0).unwrap_err();
        match err {
            Error::OutOfRange { value, min, max, .. } => {
                assert_eq!((value, min, max), (17000.0, 17500.0, 21500.0));
            }
            e => panic!("{e}"),
        }
        let (w, clamped) = scheme().evaluate_clamped(0, 22000.0);
        assert!(clamped);
        assert_eq!(w, scheme().evaluate(0, 21500.0).unwrap());
    }

    #[test]
    fn single_and_two_points() {
        let one = WeightingScheme::shared(vec![5.0], 0.0, 10.0, 1).unwrap();
        assert_eq!(one.evaluate(0, 7.0).unwrap(), vec![1.0]);
        let two = WeightingScheme::shared(vec![0.0, 10.0], 0.0, 10.0, 1).unwrap();
        let w = two.evaluate(0, 2.5).unwrap();
        assert_abs_diff_eq!(w[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn piecewise_linear_override() {
        let s = WeightingScheme::new(
            vec![0.0, 1.0, 3.0],
            0.0,
            3.0,
            &[WeightKind::NaturalCubicSpline, WeightKind::PiecewiseLinear],
        )
        .unwrap();
        let w = s.evaluate(1, 2.0).unwrap();
        assert_abs_diff_eq!(w[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 0.5, epsilon = 1e-15);
        assert_ne!(s.evaluate(0, 2.0).unwrap(), w);
    }

    #[test]
    fn bad_knots() {
        assert!(WeightingScheme::shared(vec![1.0, 1.0], 0.0, 2.0, 1).is_err());
        assert!(WeightingScheme::shared(vec![1.0, 3.0], 0.0, 2.0, 1).is_err());
    }
}
