//! Binary cross-entropy on discriminator scores.
//!
//! The public functions take probabilities in the open unit interval and
//! guard against anything else. Training works on logits through the
//! algebraically identical `softplus(a) - t * a` form so a saturated
//! discriminator cannot produce an infinite loss.

use crate::error::{Error, Result};
use crate::nn::sigmoid;

fn guard(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Numeric("empty score grid".into()));
    }
    match scores.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
        Some(s) => Err(Error::Numeric(format!("score {s} outside (0, 1)"))),
        None => Ok(()),
    }
}

fn guard_target(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("target {t} outside [0, 1]")))
    }
}

/// Cell-averaged `-(t ln s + (1 - t) ln(1 - s))`.
pub fn bce(scores: &[f64], target: f64) -> Result<f64> {
    guard(scores)?;
    guard_target(target)?;
    let sum: f64 = scores
        .iter()
        .map(|s| -(target * s.ln() + (1.0 - target) * (1.0 - s).ln()))
        .sum();
    Ok(sum / scores.len() as f64)
}

/// Derivative of [`bce`] with respect to each score.
pub fn bce_grad(scores: &[f64], target: f64) -> Result<Vec<f64>> {
    guard(scores)?;
    guard_target(target)?;
    let n = scores.len() as f64;
    Ok(scores
        .iter()
        .map(|s| (-target / s + (1.0 - target) / (1.0 - s)) / n)
        .collect())
}

#[inline]
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

/// Cell-averaged BCE of `sigmoid(logits)` against `target`, with its gradient
/// with respect to the logits.
pub fn bce_with_logits(logits: &[f64], target: f64) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let loss = logits.iter().map(|a| softplus(*a) - target * a).sum::<f64>() / n;
    let grad = logits.iter().map(|a| (sigmoid(*a) - target) / n).collect();
    (loss, grad)
}

/// Row-wise softmax of a `[n, k]` logit buffer.
pub fn softmax(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|a| (a - m).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / z));
    }
    out
}

/// Batch-mean cross-entropy of `[n, k]` logits against class indices, with
/// its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], k: usize, targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    if k == 0 || logits.len() != k * targets.len() || targets.is_empty() {
        return Err(Error::Shape(format!(
            "{} logits for {} targets over {k} classes",
            logits.len(),
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| **t >= k) {
        return Err(Error::Param(format!("target class {t} >= {k}")));
    }
    let n = targets.len() as f64;
    let mut grad = softmax(logits, k);
    let mut loss = 0.0;
    for (row, &t) in grad.chunks_mut(k).zip(targets) {
        loss -= row[t].max(f64::MIN_POSITIVE).ln();
        row[t] -= 1.0;
        row.iter_mut().for_each(|g| *g /= n);
    }
    Ok((loss / n, grad))
}
