//! Scalar forms of the training losses. The batched, differentiable
//! versions live on [`crate::tensor::Graph`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::BCE_CLAMP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Bce,
    Contrastive,
}

pub fn loss_mse(pred: f64, target: f64) -> f64 {
    (pred - target) * (pred - target)
}

/// Binary cross-entropy with the prediction clamped away from 0 and 1.
pub fn loss_bce(pred: f64, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pred) {
        return Err(Error::contract(format!("bce prediction {pred} outside [0, 1]")));
    }
    if target != 0.0 && target != 1.0 {
        return Err(Error::contract(format!("bce target {target} is not 0 or 1")));
    }
    let p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    Ok(-target * p.ln() - (1.0 - target) * (1.0 - p).ln())
}

/// `(1-y)·E² + y·max(0, m-E)²` with `y = 1` for different pairs.
pub fn loss_contrastive(energy: f64, label: f64, margin: f64) -> Result<f64> {
    if energy.is_nan() || energy < 0.0 {
        return Err(Error::contract(format!("energy {energy} must be non-negative")));
    }
    if margin.is_nan() || margin <= 0.0 {
        return Err(Error::contract(format!("margin {margin} must be positive")));
    }
    if label != 0.0 && label != 1.0 {
        return Err(Error::contract(format!("label {label} is not 0 or 1")));
    }
    let gap = (margin - energy).max(0.0);
    Ok((1.0 - label) * energy * energy + label * gap * gap)
}
