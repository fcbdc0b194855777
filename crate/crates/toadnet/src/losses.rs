//! Heat-map regression losses over probability grids.
//!
//! Both losses reduce with a mean over all cells. Weighted BCE up-weights
//! positive-cell terms by `positive_weight` to counter the background/toad
//! pixel imbalance; MSE is used when the targets are Gaussian bumps, which
//! already shrink the imbalance by spreading mass around each box.
//!
//! Everything is computed in f64 so the analytic gradients can be checked
//! against central finite differences at 1e-5 relative tolerance.

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub const DEFAULT_POSITIVE_WEIGHT: f64 = 100.0;
pub const DEFAULT_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    WeightedBce,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight applied to positive (y = 1) terms of the BCE loss.
    #[serde(default = "default_weight")]
    pub positive_weight: f64,
    /// Probability clamp bound keeping log() finite.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_weight() -> f64 {
    DEFAULT_POSITIVE_WEIGHT
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Mse,
            positive_weight: DEFAULT_POSITIVE_WEIGHT,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.positive_weight.is_finite() && self.positive_weight > 0.0) {
            return Err(Error::Config(format!(
                "positive_weight must be finite and > 0, got {}",
                self.positive_weight
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1e-3], got {}",
                self.epsilon
            )));
        }
        if self.kind == LossKind::Mse && self.positive_weight != DEFAULT_POSITIVE_WEIGHT {
            return Err(Error::Config(
                "positive_weight has no effect with the mse loss; leave it at the default".into(),
            ));
        }
        Ok(())
    }

    pub fn loss(&self, target: &Array2<f64>, pred: &Array2<f64>) -> Result<f64> {
        match self.kind {
            LossKind::WeightedBce => weighted_bce(target, pred, self.positive_weight, self.epsilon),
            LossKind::Mse => mse(target, pred),
        }
    }

    /// Gradient of the loss with respect to each predicted probability.
    pub fn grad(&self, target: &Array2<f64>, pred: &Array2<f64>) -> Result<Array2<f64>> {
        match self.kind {
            LossKind::WeightedBce => {
                grad_weighted_bce(target, pred, self.positive_weight, self.epsilon)
            }
            LossKind::Mse => grad_mse(target, pred),
        }
    }
}

fn check_grids(target: &Array2<f64>, pred: &Array2<f64>) -> Result<()> {
    if target.dim() != pred.dim() {
        return Err(Error::Shape(format!(
            "target grid {:?} does not match prediction grid {:?}",
            target.dim(),
            pred.dim()
        )));
    }
    if target.is_empty() {
        return Err(Error::Shape("empty loss grid".into()));
    }
    if pred.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Shape("predictions must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Mean over cells of -w * y * ln(p) - (1 - y) * ln(1 - p), with p clamped
/// to [epsilon, 1 - epsilon].
pub fn weighted_bce(
    target: &Array2<f64>,
    pred: &Array2<f64>,
    positive_weight: f64,
    epsilon: f64,
) -> Result<f64> {
    check_grids(target, pred)?;
    let n = target.len() as f64;
    let mut total = 0.0;
    for (&y, &p) in target.iter().zip(pred.iter()) {
        let p = p.clamp(epsilon, 1.0 - epsilon);
        total += -positive_weight * y * p.ln() - (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / n)
}

pub fn grad_weighted_bce(
    target: &Array2<f64>,
    pred: &Array2<f64>,
    positive_weight: f64,
    epsilon: f64,
) -> Result<Array2<f64>> {
    check_grids(target, pred)?;
    let n = target.len() as f64;
    let mut grad = Array2::zeros(target.dim());
    for ((g, &y), &p) in grad.iter_mut().zip(target.iter()).zip(pred.iter()) {
        // Inside the clamp band the loss is constant in p, so the gradient is 0.
        if p < epsilon || p > 1.0 - epsilon {
            *g = 0.0;
        } else {
            *g = (-positive_weight * y / p + (1.0 - y) / (1.0 - p)) / n;
        }
    }
    Ok(grad)
}

/// Mean over cells of (y - p)^2.
pub fn mse(target: &Array2<f64>, pred: &Array2<f64>) -> Result<f64> {
    check_grids(target, pred)?;
    let n = target.len() as f64;
    let total: f64 = target
        .iter()
        .zip(pred.iter())
        .map(|(&y, &p)| (y - p) * (y - p))
        .sum();
    Ok(total / n)
}

pub fn grad_mse(target: &Array2<f64>, pred: &Array2<f64>) -> Result<Array2<f64>> {
    check_grids(target, pred)?;
    let n = target.len() as f64;
    let mut grad = Array2::zeros(target.dim());
    for ((g, &y), &p) in grad.iter_mut().zip(target.iter()).zip(pred.iter()) {
        *g = 2.0 * (p - y) / n;
    }
    Ok(grad)
}
