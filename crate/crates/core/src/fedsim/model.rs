use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{bce, AdamW, Fingerprint, Layer, Module, ParamSet, Scalar, Sequential, Tensor};
use crate::rng::SeedStream;

/// Small CNN: three conv-relu-pool blocks, then dense + sigmoid.
/// `[N, 1, 32, 32] -> [N, 1]` malignancy probabilities.
pub fn classifier<T: Scalar>(rng: &mut impl Rng) -> Sequential<T> {
    Sequential::new(vec![
        Layer::conv2d(1, 8, 3, 1, 1, rng),
        Layer::norm(8),
        Layer::Relu,
        Layer::AvgPool2,
        Layer::conv2d(8, 16, 3, 1, 1, rng),
        Layer::norm(16),
        Layer::Relu,
        Layer::AvgPool2,
        Layer::conv2d(16, 32, 3, 1, 1, rng),
        Layer::norm(32),
        Layer::Relu,
        Layer::AvgPool2,
        Layer::Flatten,
        Layer::dense_with_std(32 * 4 * 4, 1, 0.01, rng),
        Layer::Sigmoid,
    ])
}

pub fn classifier_fingerprint() -> Fingerprint {
    let mut rng = SeedStream::new(0).rng("shape-only");
    Module::fingerprint(&classifier::<f32>(&mut rng))
}

/// Rebuild a classifier around stored parameters.
pub fn load_classifier(params: &ParamSet<f32>) -> Result<Sequential<f32>> {
    let mut rng = SeedStream::new(0).rng("shape-only");
    let mut model = classifier(&mut rng);
    model.load_param_set(params)?;
    Ok(model)
}

/// The FedProx anchor: `μ` and the round's global parameters, in
/// declaration order.
#[derive(Debug, Clone, Copy)]
pub struct Prox<'a, T: Scalar> {
    pub mu: T,
    pub anchor: &'a ParamSet<T>,
}

/// Loss of one batch and the gradient of `bce + (μ/2)‖w − w^t‖²`.
pub fn loss_and_grads<T: Scalar>(
    model: &Sequential<T>,
    x: &Tensor<T>,
    labels: &Tensor<T>,
    prox: Option<Prox<'_, T>>,
) -> Result<(T, Vec<Tensor<T>>)> {
    let trace = model.forward_trace(x)?;
    let (loss, g) = bce(trace.output(), labels)?;
    let (_, mut grads) = model.backward(&trace, &g)?;
    let mut total = loss;
    if let Some(p) = prox {
        let params = model.named_params();
        if p.anchor.len() != params.len() {
            return Err(Error::Incompatible("proximal anchor".into()));
        }
        let half = T::from_f64(0.5);
        for ((grad, (_, w)), (_, w0)) in grads.iter_mut().zip(&params).zip(p.anchor.iter()) {
            let diff = w.sub(w0)?;
            total += half * p.mu * diff.sq_norm();
            grad.axpy(p.mu, &diff)?;
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("classifier loss".into()));
    }
    Ok((total, grads))
}

/// One optimizer step on a batch. Returns the batch BCE plus proximal term.
pub fn train_step<T: Scalar>(
    model: &mut Sequential<T>,
    opt: &mut AdamW<T>,
    x: &Tensor<T>,
    labels: &Tensor<T>,
    prox: Option<Prox<'_, T>>,
) -> Result<T> {
    let (loss, grads) = loss_and_grads(model, x, labels, prox)?;
    opt.step(model.params_mut(), &grads)?;
    Ok(loss)
}

/// `[N, 1]` label tensor.
pub fn label_tensor<T: Scalar>(labels: &[u8]) -> Tensor<T> {
    Tensor::from_fn(&[labels.len(), 1], |i| T::from_f64(labels[i] as f64))
}
