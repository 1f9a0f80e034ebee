use crate::error::{Error, Result};

/// Smallest probability fed to `ln` in the cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// Gradient w.r.t. the softmax logits.
    pub grad: Vec<f64>,
}

/// Label-smoothed target: `(1 − ω)·[k = y] + ω / C`.
pub fn smoothed_targets(true_class: usize, classes: usize, omega: f64) -> Result<Vec<f64>> {
    if true_class >= classes {
        return Err(Error::OutOfRange {
            context: "smoothed target class",
            index: true_class,
            bound: classes,
        });
    }
    if !(0.0..1.0).contains(&omega) {
        return Err(Error::Config(format!("label smoothing weight {omega} not in [0, 1)")));
    }
    let mut q = vec![omega / classes as f64; classes];
    q[true_class] += 1.0 - omega;
    Ok(q)
}

/// `−Σ q(k) ln p(k)` for softmax output `pred`, with the gradient `p − q`
/// w.r.t. the logits that produced `pred`.
pub fn smoothed_cross_entropy(pred: &[f64], true_class: usize, omega: f64) -> Result<LossGrad> {
    let q = smoothed_targets(true_class, pred.len(), omega)?;
    let loss = -q
        .iter()
        .zip(pred)
        .filter(|(qk, _)| **qk > 0.0)
        .map(|(qk, pk)| qk * pk.max(LOG_FLOOR).ln())
        .sum::<f64>();
    let grad = pred.iter().zip(&q).map(|(p, q)| p - q).collect();
    Ok(LossGrad { loss, grad })
}

/// Huber loss on `e = prediction − target` with its derivative w.r.t. the
/// prediction (clipped to ±1).
pub fn huber_loss(prediction: f64, target: f64) -> (f64, f64) {
    let e = prediction - target;
    if e.abs() <= 1.0 {
        (0.5 * e * e, e)
    } else {
        (e.abs() - 0.5, e.signum())
    }
}
