//! Small binary classifiers with hand-written backward passes.
//!
//! Parameters live in one flat vector. For the MLP the layout is
//! `W1 (hidden x inputs, row-major) | b1 | w2 | b2`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::synth_data::DomainDataset;

pub const DEFAULT_HIDDEN: usize = 16;
pub const DEFAULT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `theta . x`, no bias.
    Linear { inputs: usize },
    /// `w2 . act(W1 x + b1) + b2`.
    Mlp { inputs: usize, hidden: usize, activation: Activation },
}

impl Layout {
    pub fn inputs(&self) -> usize {
        match *self {
            Layout::Linear { inputs } | Layout::Mlp { inputs, .. } => inputs,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Layout::Linear { inputs } => inputs,
            Layout::Mlp { inputs, hidden, .. } => hidden * inputs + 2 * hidden + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: Layout,
    theta: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(layout: Layout) -> Self {
        Self { layout, theta: vec![0.0; layout.param_count()] }
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn init_uniform(layout: Layout, seed: u64, scale: f64) -> Self {
        let mut rng = seeded(seed);
        let theta = (0..layout.param_count())
            .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        Self { layout, theta }
    }

    pub fn from_theta(layout: Layout, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != layout.param_count() {
            return Err(Error::invalid(alloc::format!(
                "layout needs {} parameters, got {}",
                layout.param_count(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self { layout, theta })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    Logistic,
    /// Logistic loss capped at the given bound.
    ClippedLogistic(f64),
}

impl Loss {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Loss::Logistic => Ok(()),
            Loss::ClippedLogistic(b) if b.is_finite() && b > 0.0 => Ok(()),
            Loss::ClippedLogistic(b) => {
                Err(Error::invalid(alloc::format!("loss bound must be positive, got {b}")))
            }
        }
    }

    /// Per-example loss and its derivative in the logit.
    pub fn value_and_slope(&self, logit: f64, label: u8) -> (f64, f64) {
        let y = label as f64;
        // softplus(f) - y f, computed without overflow
        let sp = logit.max(0.0) + libm::log1p(libm::exp(-logit.abs()));
        let loss = sp - y * logit;
        let slope = sigmoid(logit) - y;
        match *self {
            Loss::Logistic => (loss, slope),
            Loss::ClippedLogistic(b) if loss > b => (b, 0.0),
            Loss::ClippedLogistic(_) => (loss, slope),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn activate(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Tanh => libm::tanh(x),
        Activation::Relu => x.max(0.0),
    }
}

/// Derivative of the activation given its pre-activation and output.
fn activate_slope(a: Activation, pre: f64, out: f64) -> f64 {
    match a {
        Activation::Tanh => 1.0 - out * out,
        Activation::Relu => (pre > 0.0) as u8 as f64,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logit of one example; `hidden` is scratch space of the hidden width
/// and holds the pre-activations afterwards.
fn logit_into(params: &ModelParams, x: &[f64], hidden: &mut [f64]) -> f64 {
    let t = &params.theta;
    match params.layout {
        Layout::Linear { .. } => dot(t, x),
        Layout::Mlp { inputs, hidden: h, activation } => {
            let (w1, rest) = t.split_at(h * inputs);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h);
            let mut out = b2[0];
            for j in 0..h {
                let pre = dot(&w1[j * inputs..(j + 1) * inputs], x) + b1[j];
                hidden[j] = pre;
                out += w2[j] * activate(activation, pre);
            }
            out
        }
    }
}

fn hidden_width(layout: Layout) -> usize {
    match layout {
        Layout::Linear { .. } => 0,
        Layout::Mlp { hidden, .. } => hidden,
    }
}

pub fn forward(params: &ModelParams, x: &[f64]) -> Result<f64> {
    if x.len() != params.layout.inputs() {
        return Err(Error::invalid(alloc::format!(
            "model expects {} features, got {}",
            params.layout.inputs(),
            x.len()
        )));
    }
    let mut hidden = vec![0.0; hidden_width(params.layout)];
    Ok(logit_into(params, x, &mut hidden))
}

/// Empirical risk of one domain and its gradient in the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainRiskGrad {
    pub risk: f64,
    pub grad: Vec<f64>,
}

fn check_data(params: &ModelParams, data: &DomainDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if data.dim() != params.layout.inputs() {
        return Err(Error::invalid(alloc::format!(
            "model expects {} features, data has {}",
            params.layout.inputs(),
            data.dim()
        )));
    }
    Ok(())
}

pub fn domain_risk(params: &ModelParams, data: &DomainDataset, loss: Loss) -> Result<f64> {
    check_data(params, data)?;
    loss.validate()?;
    let mut hidden = vec![0.0; hidden_width(params.layout)];
    let total: f64 = data
        .rows()
        .map(|(x, y)| loss.value_and_slope(logit_into(params, x, &mut hidden), y).0)
        .sum();
    Ok(total / data.len() as f64)
}

pub fn domain_risk_grad(params: &ModelParams, data: &DomainDataset, loss: Loss) -> Result<DomainRiskGrad> {
    check_data(params, data)?;
    loss.validate()?;
    let mut grad = vec![0.0; params.theta.len()];
    let mut hidden = vec![0.0; hidden_width(params.layout)];
    let mut total = 0.0;
    for (x, y) in data.rows() {
        let f = logit_into(params, x, &mut hidden);
        let (l, g) = loss.value_and_slope(f, y);
        total += l;
        if g == 0.0 {
            continue;
        }
        match params.layout {
            Layout::Linear { .. } => {
                for (gi, xi) in grad.iter_mut().zip(x) {
                    *gi += g * xi;
                }
            }
            Layout::Mlp { inputs, hidden: h, activation } => {
                let w2_off = h * inputs + h;
                for j in 0..h {
                    let pre = hidden[j];
                    let out = activate(activation, pre);
                    grad[w2_off + j] += g * out;
                    let back = g * params.theta[w2_off + j] * activate_slope(activation, pre, out);
                    if back != 0.0 {
                        for (k, xk) in x.iter().enumerate() {
                            grad[j * inputs + k] += back * xk;
                        }
                        grad[h * inputs + j] += back;
                    }
                }
                grad[w2_off + h] += g;
            }
        }
    }
    let m = data.len() as f64;
    grad.iter_mut().for_each(|v| *v /= m);
    Ok(DomainRiskGrad { risk: total / m, grad })
}

/// Fraction of examples classified correctly; a zero logit predicts 0.
pub fn accuracy(params: &ModelParams, data: &DomainDataset) -> Result<f64> {
    check_data(params, data)?;
    let mut hidden = vec![0.0; hidden_width(params.layout)];
    let correct = data
        .rows()
        .filter(|(x, y)| ((logit_into(params, x, &mut hidden) > 0.0) as u8) == *y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
