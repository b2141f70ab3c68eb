//! Logistic regression over the three-component gate tuple, trained by
//! full-batch gradient descent from a zero initialisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GATE_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 3000,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: [f64; GATE_DIM],
    pub bias: f64,
    pub params: LogisticParams,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean binary cross-entropy plus `l2 / 2 * |w|^2` (bias unregularised).
pub fn loss(weights: &[f64; GATE_DIM], bias: f64, h: &[[f64; GATE_DIM]], y: &[bool], l2: f64) -> f64 {
    let n = h.len() as f64;
    let data: f64 = h
        .iter()
        .zip(y)
        .map(|(x, &t)| {
            let z = dot(weights, x) + bias;
            // -[t log s(z) + (1-t) log(1 - s(z))]
            if t {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum::<f64>()
        / n;
    data + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of [`loss`] with respect to `(weights, bias)`.
pub fn gradient(
    weights: &[f64; GATE_DIM],
    bias: f64,
    h: &[[f64; GATE_DIM]],
    y: &[bool],
    l2: f64,
) -> ([f64; GATE_DIM], f64) {
    let n = h.len() as f64;
    let mut gw = [0.0; GATE_DIM];
    let mut gb = 0.0;
    for (x, &t) in h.iter().zip(y) {
        let err = sigmoid(dot(weights, x) + bias) - if t { 1.0 } else { 0.0 };
        for k in 0..GATE_DIM {
            gw[k] += err * x[k];
        }
        gb += err;
    }
    for k in 0..GATE_DIM {
        gw[k] = gw[k] / n + l2 * weights[k];
    }
    (gw, gb / n)
}

fn dot(w: &[f64; GATE_DIM], x: &[f64; GATE_DIM]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

impl LogisticModel {
    /// Acceptance probability, kept strictly inside (0, 1).
    pub fn predict(&self, h: &[f64; GATE_DIM]) -> f64 {
        sigmoid(dot(&self.weights, h) + self.bias).clamp(1e-15, 1.0 - 1e-15)
    }
}

pub fn train_logistic(h: &[[f64; GATE_DIM]], y: &[bool], params: &LogisticParams) -> Result<LogisticModel> {
    train_logistic_traced(h, y, params).map(|(m, _)| m)
}

/// Like [`train_logistic`], also returning the mean loss after every epoch.
pub fn train_logistic_traced(
    h: &[[f64; GATE_DIM]],
    y: &[bool],
    params: &LogisticParams,
) -> Result<(LogisticModel, Vec<f64>)> {
    if h.is_empty() {
        return Err(Error::EmptyInput);
    }
    if h.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            got: y.len(),
        });
    }
    if params.learning_rate.is_nan() || params.learning_rate <= 0.0 || params.l2 < 0.0 {
        return Err(Error::Config("logistic learning_rate must be > 0 and l2 >= 0".into()));
    }
    let mut weights = [0.0; GATE_DIM];
    let mut bias = 0.0;
    let mut loss_history = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        let (gw, gb) = gradient(&weights, bias, h, y, params.l2);
        for k in 0..GATE_DIM {
            weights[k] -= params.learning_rate * gw[k];
        }
        bias -= params.learning_rate * gb;
        loss_history.push(loss(&weights, bias, h, y, params.l2));
    }
    Ok((
        LogisticModel {
            weights,
            bias,
            params: params.clone(),
        },
        loss_history,
    ))
}
