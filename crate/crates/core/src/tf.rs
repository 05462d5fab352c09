//! Discrete single-input single-output transfer functions
//!
//! ```text
//!          (b_1 q^-1 + ... + b_n q^-n) q^-d
//!   G(q) = --------------------------------
//!            1 + a_1 q^-1 + ... + a_n q^-n
//! ```
//!
//! Input sample `s` of a series drives output sample `s` one control period
//! later, so a series of length `L` produces `L` outputs `y(1)..y(L)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTransferFunction {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    #[serde(default)]
    pub d: usize,
}

impl DiscreteTransferFunction {
    pub fn new(b: Vec<f64>, a: Vec<f64>, d: usize) -> Result<Self> {
        let tf = Self { b, a, d };
        tf.check_shape()?;
        Ok(tf)
    }

    /// The structurally absent channel.
    pub fn zero() -> Self {
        Self {
            b: vec![0.0],
            a: vec![0.0],
            d: 0,
        }
    }

    /// First-order lag `gain / (tau s + 1)` sampled at `period`, plus `d`
    /// samples of dead time.
    pub fn first_order(gain: f64, tau: f64, period: f64, d: usize) -> Self {
        let pole = (-period / tau).exp();
        Self {
            b: vec![gain * (1.0 - pole)],
            a: vec![-pole],
            d,
        }
    }

    pub fn order(&self) -> usize {
        self.a.len()
    }

    pub fn is_zero(&self) -> bool {
        self.b.iter().all(|&v| v == 0.0)
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.a.is_empty() {
            return Err(Error::Config("transfer function order must be >= 1".into()));
        }
        if self.a.len() != self.b.len() {
            return Err(Error::Config(format!(
                "numerator has {} coefficients, denominator {}",
                self.b.len(),
                self.a.len()
            )));
        }
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// Schur-Cohn test: every root of `z^n + a_1 z^{n-1} + ... + a_n` lies
    /// strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        let mut c: Vec<f64> = std::iter::once(1.0).chain(self.a.iter().copied()).collect();
        while c.len() > 1 {
            let n = c.len() - 1;
            let k = c[n] / c[0];
            if k.abs() >= 1.0 {
                return false;
            }
            let denom = 1.0 - k * k;
            c = (0..n).map(|i| (c[i] - k * c[n - i]) / denom).collect();
        }
        true
    }

    pub fn steady_state_gain(&self) -> Result<f64> {
        let den = 1.0 + self.a.iter().sum::<f64>();
        if den.abs() < 1e-12 {
            return Err(Error::IntegratingChannel(format!("a = {:?}", self.a)));
        }
        Ok(self.b.iter().sum::<f64>() / den)
    }

    /// Runs the difference equation from zero initial conditions.
    pub fn simulate(&self, input: &[f64]) -> Vec<f64> {
        let mut state = ChannelState::new(self);
        input.iter().map(|&u| state.step(self, u)).collect()
    }

    /// Unit step response of length `len`: entry `s` is the output `s + 1`
    /// periods after the step is applied.
    pub fn step_response(&self, len: usize) -> Vec<f64> {
        self.simulate(&vec![1.0; len])
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            b: self.b.iter().map(|v| v * factor).collect(),
            a: self.a.clone(),
            d: self.d,
        }
    }
}

/// Recursion memory of one channel: the last `n + d` inputs and the last
/// `n` outputs, most recent first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    inputs: Vec<f64>,
    outputs: Vec<f64>,
}

impl ChannelState {
    pub fn new(tf: &DiscreteTransferFunction) -> Self {
        Self {
            inputs: vec![0.0; tf.order() + tf.d],
            outputs: vec![0.0; tf.order()],
        }
    }

    /// State of a channel that has seen the constant input `u` forever.
    pub fn steady(tf: &DiscreteTransferFunction, u: f64) -> Result<Self> {
        let y = tf.steady_state_gain()? * u;
        Ok(Self {
            inputs: vec![u; tf.order() + tf.d],
            outputs: vec![y; tf.order()],
        })
    }

    /// Most recent output.
    pub fn output(&self) -> f64 {
        self.outputs[0]
    }

    pub fn step(&mut self, tf: &DiscreteTransferFunction, u: f64) -> f64 {
        self.inputs.rotate_right(1);
        self.inputs[0] = u;
        let mut y = 0.0;
        for (i, (a, b)) in tf.a.iter().zip(&tf.b).enumerate() {
            y += b * self.inputs[tf.d + i] - a * self.outputs[i];
        }
        self.outputs.rotate_right(1);
        self.outputs[0] = y;
        y
    }

    pub fn depth(&self) -> usize {
        self.inputs.len()
    }

    /// Output memory as if the numerator had been multiplied by `factor`.
    pub fn scale_outputs(&mut self, factor: f64) {
        self.outputs.iter_mut().for_each(|y| *y *= factor);
    }
}
