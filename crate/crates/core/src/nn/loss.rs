use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient w.r.t. `prob`.
///
/// The gradient is taken at the clamped probability and passed straight
/// through the clamp, so saturated predictions still get pushed back.
pub fn bce<T: Scalar>(prob: &Tensor<T>, label: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if let Some(&y) = label
        .data()
        .iter()
        .find(|&&y| y != T::zero() && y != T::one())
    {
        return Err(Error::InvalidLabel(y.as_f64()));
    }
    cross_entropy(prob, label)
}

/// Cross-entropy against targets anywhere in `[0, 1]`, e.g. smoothed real
/// labels for a discriminator.
pub fn bce_soft<T: Scalar>(prob: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if let Some(&y) = target
        .data()
        .iter()
        .find(|&&y| !(y >= T::zero() && y <= T::one()))
    {
        return Err(Error::InvalidLabel(y.as_f64()));
    }
    cross_entropy(prob, target)
}

fn cross_entropy<T: Scalar>(prob: &Tensor<T>, label: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if prob.shape() != label.shape() {
        return Err(Error::Shape {
            layer: "bce",
            expected: format!("{:?}", prob.shape()),
            got: label.shape().to_vec(),
        });
    }
    if prob.is_empty() {
        return Err(Error::Empty("bce batch".into()));
    }
    let lo = T::from_f64(PROB_EPS);
    let hi = T::from_f64(1.0 - PROB_EPS);
    let n = T::from_f64(prob.len() as f64);
    let mut terms = Vec::with_capacity(prob.len());
    let mut grad = Vec::with_capacity(prob.len());
    for (&p, &y) in prob.data().iter().zip(label.data()) {
        if !p.is_finite() {
            return Err(Error::NonFinite("bce input".into()));
        }
        let pc = p.max(lo).min(hi);
        terms.push(-(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln()));
        grad.push((pc - y) / (pc * (T::one() - pc)) / n);
    }
    let loss = super::kernels::sum(&terms) / n;
    Ok((loss, Tensor::new(prob.shape().to_vec(), grad)?))
}

/// Mean squared error and its gradient `2 (pred - target) / N`.
pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            layer: "mse",
            expected: format!("{:?}", pred.shape()),
            got: target.shape().to_vec(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("mse batch".into()));
    }
    let n = T::from_f64(pred.len() as f64);
    let diff = pred.sub(target)?;
    let loss = diff.sq_norm() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("mse loss".into()));
    }
    let two = T::from_f64(2.0);
    Ok((loss, diff.map(|d| two * d / n)))
}
