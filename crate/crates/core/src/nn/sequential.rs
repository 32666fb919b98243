use super::layer::Layer;
use super::params::Module;
use super::tensor::{Scalar, Tensor};
use crate::error::Result;

/// A chain of layers. Parameters are named `"{index}.{local}"`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T = f32> {
    pub layers: Vec<Layer<T>>,
}

/// Inputs seen by each layer during a forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    inputs: Vec<Tensor<T>>,
    output: Tensor<T>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }

    pub fn into_output(self) -> Tensor<T> {
        self.output
    }
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let next = l.forward(&h)?;
            inputs.push(h);
            h = next;
        }
        Ok(Trace { inputs, output: h })
    }

    /// Input gradient plus parameter gradients in [`Module::named_params`] order.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut g = grad_out.clone();
        let mut per_layer: Vec<Vec<Tensor<T>>> = Vec::with_capacity(self.layers.len());
        for (l, x) in self.layers.iter().zip(&trace.inputs).rev() {
            let (gx, pg) = l.backward(x, &g)?;
            per_layer.push(pg);
            g = gx;
        }
        per_layer.reverse();
        Ok((g, per_layer.into_iter().flatten().collect()))
    }
}

impl<T: Scalar> Module<T> for Sequential<T> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params()
                    .into_iter()
                    .map(move |(n, t)| (format!("{i}.{n}"), t))
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

/// Prefix every name of `inner` with `prefix.`.
pub fn prefixed<'a, T>(
    prefix: &str,
    inner: Vec<(String, &'a Tensor<T>)>,
) -> Vec<(String, &'a Tensor<T>)> {
    inner
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}
