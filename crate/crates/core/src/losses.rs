//! Pointwise losses over a logit vector, with analytic gradients.
//!
//! `logistic_loss` is the agreement term. `disagreement_loss` is the convex
//! surrogate that upper-bounds the 0-1 *agreement* indicator, so minimizing
//! it drives disagreement. `dbat_loss` and `neg_xent_loss` are the two older
//! disagreement objectives, kept for comparison runs.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// ∂value/∂logits
    pub gradient: Vec<f64>,
}

/// Loss selector used by the training loop's allocation-free path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic { normalize: bool },
    Disagreement,
    Dbat,
    NegXent,
}

impl LossKind {
    /// Writes the gradient into `grad` and returns the value.
    /// Callers guarantee `logits.len() == grad.len() >= 2` and `y` in range.
    pub(crate) fn eval_into(self, logits: &[f64], y: usize, grad: &mut [f64]) -> f64 {
        match self {
            LossKind::Logistic { normalize } => {
                let scale = if normalize {
                    1.0 / (logits.len() as f64).ln()
                } else {
                    1.0
                };
                let (ce, lse) = cross_entropy(logits, y);
                for (g, &z) in grad.iter_mut().zip(logits) {
                    *g = scale * (z - lse).exp();
                }
                grad[y] = scale * (-ce).exp_m1();
                scale * ce
            }
            LossKind::Disagreement => {
                let c = logits.len() as f64;
                let others = (logits.iter().sum::<f64>() - logits[y]) / (c - 1.0);
                let u = logits[y] - others;
                let s = sigmoid(u) / LN_2;
                let off = -s / (c - 1.0);
                grad.fill(off);
                grad[y] = s;
                softplus(u) / LN_2
            }
            LossKind::Dbat => {
                let lse_others = log_sum_exp(
                    logits
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != y)
                        .map(|(_, &z)| z),
                );
                let v = logits[y] - lse_others;
                let s = sigmoid(v);
                for (k, (g, &z)) in grad.iter_mut().zip(logits).enumerate() {
                    *g = if k == y { s } else { -s * (z - lse_others).exp() };
                }
                softplus(v)
            }
            LossKind::NegXent => {
                let (ce, lse) = cross_entropy(logits, y);
                for (g, &z) in grad.iter_mut().zip(logits) {
                    *g = -(z - lse).exp();
                }
                grad[y] = -(-ce).exp_m1();
                -ce
            }
        }
    }

    pub fn eval(self, logits: &[f64], y: usize) -> Result<LossEval> {
        validate(logits, y)?;
        let mut gradient = vec![0.0; logits.len()];
        let value = self.eval_into(logits, y, &mut gradient);
        Ok(LossEval { value, gradient })
    }
}

fn validate(logits: &[f64], y: usize) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::invalid(format!(
            "losses need at least 2 classes, got {}",
            logits.len()
        )));
    }
    if y >= logits.len() {
        return Err(Error::InvalidLabel {
            label: y as i64,
            classes: logits.len(),
        });
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    Ok(())
}

/// Cross-entropy `-log softmax(z)_y`, divided by `log C` when `normalize`.
pub fn logistic_loss(logits: &[f64], y: usize, normalize: bool) -> Result<LossEval> {
    LossKind::Logistic { normalize }.eval(logits, y)
}

/// `log2(1 + exp(z_y - mean_{k≠y} z_k))`.
pub fn disagreement_loss(logits: &[f64], y: usize) -> Result<LossEval> {
    LossKind::Disagreement.eval(logits, y)
}

/// `log(1 + exp(z_y) / Σ_{k≠y} exp(z_k))`.
pub fn dbat_loss(logits: &[f64], y: usize) -> Result<LossEval> {
    LossKind::Dbat.eval(logits, y)
}

/// `log softmax(z)_y`; concave and unbounded below.
pub fn neg_xent_loss(logits: &[f64], y: usize) -> Result<LossEval> {
    LossKind::NegXent.eval(logits, y)
}

/// `lse(z) - z_y` as `softplus(lse_{k≠y} - z_y)`, which stays accurate when
/// class `y` dominates. Also returns `lse(z)`.
fn cross_entropy(logits: &[f64], y: usize) -> (f64, f64) {
    let others = log_sum_exp(logits.iter().enumerate().filter(|&(k, _)| k != y).map(|(_, &z)| z));
    let ce = softplus(others - logits[y]);
    (ce, logits[y] + ce)
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log(1 + e^z)` as `max(z, 0) + log1p(e^{-|z|})`.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
