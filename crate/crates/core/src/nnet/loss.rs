use super::tensor::Tensor;
use crate::error::{Error, Result};

fn check(pred: &Tensor, target: &Tensor, smooth: f64) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("{:?}", target.shape()), format!("{:?}", pred.shape())));
    }
    if !(smooth >= 0.0) {
        return Err(Error::InvalidParameter(format!("dice smoothing must be >= 0, got {smooth}")));
    }
    if target.data().iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::InvalidParameter("dice target must be binary".into()));
    }
    if pred.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidParameter("dice prediction must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Soft Dice `(2 Σ p·t + s) / (Σ p + Σ t + s)`. With `smooth = 0` and both
/// inputs empty the ratio is undefined and `NaN` is returned.
pub fn dice_coefficient(pred: &Tensor, target: &Tensor, smooth: f64) -> Result<f64> {
    check(pred, target, smooth)?;
    let (inter, sum_p, sum_t) = sums(pred, target);
    Ok((2.0 * inter + smooth) / (sum_p + sum_t + smooth))
}

fn sums(pred: &Tensor, target: &Tensor) -> (f64, f64, f64) {
    pred.data()
        .iter()
        .zip(target.data())
        .fold((0.0, 0.0, 0.0), |(i, p, t), (&pv, &tv)| (i + pv * tv, p + pv, t + tv))
}

/// Negative soft Dice.
pub fn dice_loss(pred: &Tensor, target: &Tensor, smooth: f64) -> Result<f64> {
    if !(smooth > 0.0) {
        return Err(Error::InvalidParameter("dice loss needs a positive smoothing term".into()));
    }
    Ok(-dice_coefficient(pred, target, smooth)?)
}

/// Dice loss and its gradient with respect to `pred`.
pub fn dice_loss_grad(pred: &Tensor, target: &Tensor, smooth: f64) -> Result<(f64, Tensor)> {
    let loss = dice_loss(pred, target, smooth)?;
    let (inter, sum_p, sum_t) = sums(pred, target);
    let num = 2.0 * inter + smooth;
    let den = sum_p + sum_t + smooth;
    let grad: Vec<f64> = target
        .data()
        .iter()
        .map(|&t| -(2.0 * t * den - num) / (den * den))
        .collect();
    Ok((loss, Tensor::from_vec(pred.shape(), grad)?))
}

const PROB_EPS: f64 = 1e-12;

/// Binary cross-entropy of a probability against a 0/1 label.
pub fn binary_cross_entropy(prob: f64, label: f64) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}
