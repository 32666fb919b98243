//! Layers with explicit forward and backward passes.
//!
//! `backward` takes the same input that was given to `forward` and recomputes
//! whatever it needs; layers keep no activation state, so a forward/backward
//! pair never mutates parameters.

use rand::Rng;
use rayon::prelude::*;

use super::kernels::{self, Window};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f32> {
    /// `[out, in]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T = f32> {
    /// `[out_channels, in_channels, k, k]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T = f32> {
    /// `[in_channels, out_channels, k, k]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

/// Per-sample, per-channel normalization over the spatial extent followed by
/// a learned per-channel affine map. Statistics never mix samples, so outputs
/// do not depend on what else is in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNorm<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T = f32> {
    /// `[rows, dim]`
    pub table: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T = f32> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    ConvTranspose2d(ConvTranspose2d<T>),
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Norm(ChannelNorm<T>),
    Embedding(Embedding<T>),
    /// 2×2 average pooling with stride 2.
    AvgPool2,
    /// `[N, ...] -> [N, prod(...)]`
    Flatten,
}

pub type ParamGrads<T> = Vec<Tensor<T>>;

fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in.max(1) as f64).sqrt()
}

impl<T: Scalar> Layer<T> {
    pub fn dense<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self::dense_with_std(inputs, outputs, he_std(inputs), rng)
    }

    pub fn dense_with_std<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Layer::Dense(Dense {
            weight: Tensor::randn(&[outputs, inputs], std, rng),
            bias: Tensor::zeros(&[outputs]),
        })
    }

    pub fn conv2d<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Self::conv2d_with_std(
            cin,
            cout,
            kernel,
            stride,
            padding,
            he_std(cin * kernel * kernel),
            rng,
        )
    }

    pub fn conv2d_with_std<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Layer::Conv2d(Conv2d {
            weight: Tensor::randn(&[cout, cin, kernel, kernel], std, rng),
            bias: Tensor::zeros(&[cout]),
            stride,
            padding,
        })
    }

    pub fn conv_transpose2d<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Layer::ConvTranspose2d(ConvTranspose2d {
            weight: Tensor::randn(&[cin, cout, kernel, kernel], std, rng),
            bias: Tensor::zeros(&[cout]),
            stride,
            padding,
        })
    }

    pub fn norm(channels: usize) -> Self {
        Layer::Norm(ChannelNorm {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            eps: 1e-5,
        })
    }

    pub fn embedding<R: Rng + ?Sized>(rows: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        Layer::Embedding(Embedding {
            table: Tensor::randn(&[rows, dim], std, rng),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::ConvTranspose2d(_) => "conv_transpose2d",
            Layer::Relu => "relu",
            Layer::LeakyRelu(_) => "leaky_relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Tanh => "tanh",
            Layer::Norm(_) => "batchless_norm",
            Layer::Embedding(_) => "embedding",
            Layer::AvgPool2 => "avg_pool2",
            Layer::Flatten => "flatten",
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Dense(d) => vec![("weight", &d.weight), ("bias", &d.bias)],
            Layer::Conv2d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::ConvTranspose2d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::Norm(n) => vec![("gamma", &n.gamma), ("beta", &n.beta)],
            Layer::Embedding(e) => vec![("table", &e.table)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::ConvTranspose2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Norm(n) => vec![&mut n.gamma, &mut n.beta],
            Layer::Embedding(e) => vec![&mut e.table],
            _ => Vec::new(),
        }
    }

    fn mismatch(&self, expected: impl Into<String>, got: &[usize]) -> Error {
        Error::Shape {
            layer: self.kind(),
            expected: expected.into(),
            got: got.to_vec(),
        }
    }

    /// Output shape for a given input shape, without touching any data.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                let (out, inp) = (d.weight.shape()[0], d.weight.shape()[1]);
                match input {
                    [n, f] if *f == inp => Ok(vec![*n, out]),
                    _ => Err(self.mismatch(format!("[N, {inp}]"), input)),
                }
            }
            Layer::Conv2d(c) => {
                let ws = c.weight.shape();
                let (cout, cin, k) = (ws[0], ws[1], ws[2]);
                match input {
                    [n, ch, h, w] if *ch == cin => {
                        Window::for_conv(cin, *h, *w, k, c.stride, c.padding)
                            .map(|win| vec![*n, cout, win.out_h, win.out_w])
                            .ok_or_else(|| {
                                self.mismatch(format!("[N, {cin}, H>={k}, W>={k}]"), input)
                            })
                    }
                    _ => Err(self.mismatch(format!("[N, {cin}, H, W]"), input)),
                }
            }
            Layer::ConvTranspose2d(c) => {
                let ws = c.weight.shape();
                let (cin, cout, k) = (ws[0], ws[1], ws[2]);
                match input {
                    [n, ch, h, w] if *ch == cin => {
                        Window::for_transpose(cout, *h, *w, k, c.stride, c.padding)
                            .map(|win| vec![*n, cout, win.height, win.width])
                            .ok_or_else(|| self.mismatch(format!("[N, {cin}, H, W]"), input))
                    }
                    _ => Err(self.mismatch(format!("[N, {cin}, H, W]"), input)),
                }
            }
            Layer::Norm(nm) => {
                let c = nm.gamma.len();
                match input {
                    [_, ch, h, w] if *ch == c && h * w > 1 => Ok(input.to_vec()),
                    _ => Err(self.mismatch(format!("[N, {c}, H, W] with H*W > 1"), input)),
                }
            }
            Layer::Embedding(e) => match input {
                [n] => Ok(vec![*n, e.table.shape()[1]]),
                _ => Err(self.mismatch("[N] of row indices", input)),
            },
            Layer::AvgPool2 => match input {
                [n, c, h, w] if h % 2 == 0 && w % 2 == 0 && *h > 0 && *w > 0 => {
                    Ok(vec![*n, *c, h / 2, w / 2])
                }
                _ => Err(self.mismatch("[N, C, H even, W even]", input)),
            },
            Layer::Flatten => match input {
                [n, rest @ ..] if !rest.is_empty() => Ok(vec![*n, rest.iter().product()]),
                _ => Err(self.mismatch("[N, ...]", input)),
            },
            Layer::Relu | Layer::LeakyRelu(_) | Layer::Sigmoid | Layer::Tanh => {
                if input.is_empty() {
                    Err(self.mismatch("non-empty shape", input))
                } else {
                    Ok(input.to_vec())
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        let out = match self {
            Layer::Dense(d) => dense_forward(d, x, &out_shape),
            Layer::Conv2d(c) => conv_forward(c, x, &out_shape),
            Layer::ConvTranspose2d(c) => conv_t_forward(c, x, &out_shape),
            Layer::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            Layer::LeakyRelu(slope) => {
                let s = T::from_f64(*slope);
                x.map(|v| if v > T::zero() { v } else { v * s })
            }
            Layer::Sigmoid => x.map(sigmoid),
            Layer::Tanh => x.map(|v| v.tanh()),
            Layer::Norm(n) => norm_forward(n, x),
            Layer::Embedding(e) => embedding_forward(e, x, &out_shape)?,
            Layer::AvgPool2 => pool_forward(x, &out_shape),
            Layer::Flatten => x.clone().reshape(&out_shape)?,
        };
        out.ensure_finite(self.kind())
    }

    /// Gradient of the loss w.r.t. the input and each parameter (in
    /// [`Layer::params`] order), given the gradient w.r.t. the output.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, ParamGrads<T>)> {
        let out_shape = self.output_shape(x.shape())?;
        if grad_out.shape() != out_shape.as_slice() {
            return Err(self.mismatch(format!("upstream gradient {out_shape:?}"), grad_out.shape()));
        }
        if !grad_out.all_finite() {
            return Err(Error::NonFinite(format!(
                "upstream gradient into {}",
                self.kind()
            )));
        }
        let (gx, grads) = match self {
            Layer::Dense(d) => dense_backward(d, x, grad_out),
            Layer::Conv2d(c) => conv_backward(c, x, grad_out),
            Layer::ConvTranspose2d(c) => conv_t_backward(c, x, grad_out),
            Layer::Relu => (
                x.zip_map(grad_out, |v, g| if v > T::zero() { g } else { T::zero() })?,
                vec![],
            ),
            Layer::LeakyRelu(slope) => {
                let s = T::from_f64(*slope);
                (
                    x.zip_map(grad_out, |v, g| if v > T::zero() { g } else { g * s })?,
                    vec![],
                )
            }
            Layer::Sigmoid => (
                x.zip_map(grad_out, |v, g| {
                    let s = sigmoid(v);
                    g * s * (T::one() - s)
                })?,
                vec![],
            ),
            Layer::Tanh => (
                x.zip_map(grad_out, |v, g| {
                    let t = v.tanh();
                    g * (T::one() - t * t)
                })?,
                vec![],
            ),
            Layer::Norm(n) => norm_backward(n, x, grad_out),
            Layer::Embedding(e) => embedding_backward(e, x, grad_out),
            Layer::AvgPool2 => (pool_backward(x, grad_out), vec![]),
            Layer::Flatten => (grad_out.clone().reshape(x.shape())?, vec![]),
        };
        let gx = gx.ensure_finite(self.kind())?;
        for g in &grads {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "{} parameter gradient",
                    self.kind()
                )));
            }
        }
        Ok((gx, grads))
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn dense_forward<T: Scalar>(d: &Dense<T>, x: &Tensor<T>, out_shape: &[usize]) -> Tensor<T> {
    let (n, out) = (out_shape[0], out_shape[1]);
    let inp = d.weight.shape()[1];
    let w = d.weight.data();
    let b = d.bias.data();
    let mut y = vec![T::zero(); n * out];
    for (row, xr) in y.chunks_mut(out).zip(x.data().chunks(inp)) {
        for (o, yo) in row.iter_mut().enumerate() {
            *yo = b[o] + kernels::dot(&w[o * inp..(o + 1) * inp], xr);
        }
    }
    Tensor::new(out_shape.to_vec(), y).expect("dense output shape")
}

fn dense_backward<T: Scalar>(
    d: &Dense<T>,
    x: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, ParamGrads<T>) {
    let (out, inp) = (d.weight.shape()[0], d.weight.shape()[1]);
    let w = d.weight.data();
    let mut gw = vec![T::zero(); out * inp];
    let mut gb = vec![T::zero(); out];
    let mut gx = vec![T::zero(); x.len()];
    for ((gr, xr), gxr) in g
        .data()
        .chunks(out)
        .zip(x.data().chunks(inp))
        .zip(gx.chunks_mut(inp))
    {
        for o in 0..out {
            let go = gr[o];
            gb[o] += go;
            kernels::axpy(go, xr, &mut gw[o * inp..(o + 1) * inp]);
            kernels::axpy(go, &w[o * inp..(o + 1) * inp], gxr);
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("dense input grad"),
        vec![
            Tensor::new(d.weight.shape().to_vec(), gw).expect("dense weight grad"),
            Tensor::new(vec![out], gb).expect("dense bias grad"),
        ],
    )
}

fn conv_window<T: Scalar>(c: &Conv2d<T>, x: &Tensor<T>) -> Window {
    let s = x.shape();
    let k = c.weight.shape()[2];
    Window::for_conv(s[1], s[2], s[3], k, c.stride, c.padding).expect("validated by output_shape")
}

fn conv_forward<T: Scalar>(c: &Conv2d<T>, x: &Tensor<T>, out_shape: &[usize]) -> Tensor<T> {
    let win = conv_window(c, x);
    let cout = out_shape[1];
    let (rows, pos) = (win.rows(), win.positions());
    let per_in = win.image_len();
    let per_out = cout * pos;
    let mut y = vec![T::zero(); out_shape[0] * per_out];
    let w = c.weight.data();
    let b = c.bias.data();
    y.par_chunks_mut(per_out)
        .zip(x.data().par_chunks(per_in))
        .for_each(|(yo, xi)| {
            let mut cols = vec![T::zero(); rows * pos];
            win.im2col(xi, &mut cols);
            kernels::matmul(w, &cols, yo, cout, rows, pos);
            for (ch, plane) in yo.chunks_mut(pos).enumerate() {
                for v in plane {
                    *v += b[ch];
                }
            }
        });
    Tensor::new(out_shape.to_vec(), y).expect("conv output shape")
}

/// Sum per-sample parameter gradients in sample order.
fn reduce_in_order<T: Scalar>(parts: &[Vec<T>], len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in parts {
        for (a, &v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

fn conv_backward<T: Scalar>(
    c: &Conv2d<T>,
    x: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, ParamGrads<T>) {
    let win = conv_window(c, x);
    let cout = c.weight.shape()[0];
    let (rows, pos) = (win.rows(), win.positions());
    let per_in = win.image_len();
    let per_out = cout * pos;
    let w = c.weight.data();
    let parts: Vec<(Vec<T>, Vec<T>, Vec<T>)> = x
        .data()
        .par_chunks(per_in)
        .zip(g.data().par_chunks(per_out))
        .map(|(xi, gi)| {
            let mut cols = vec![T::zero(); rows * pos];
            win.im2col(xi, &mut cols);
            let mut gw = vec![T::zero(); cout * rows];
            kernels::matmul_a_bt_acc(gi, &cols, &mut gw, cout, rows, pos);
            let gb: Vec<T> = gi.chunks(pos).map(kernels::sum).collect();
            kernels::matmul_at_b(w, gi, &mut cols, cout, rows, pos);
            let mut gx = vec![T::zero(); per_in];
            win.col2im(&cols, &mut gx);
            (gx, gw, gb)
        })
        .collect();
    let mut gx = Vec::with_capacity(x.len());
    for p in &parts {
        gx.extend_from_slice(&p.0);
    }
    let gws: Vec<Vec<T>> = parts.iter().map(|p| p.1.clone()).collect();
    let gbs: Vec<Vec<T>> = parts.iter().map(|p| p.2.clone()).collect();
    (
        Tensor::new(x.shape().to_vec(), gx).expect("conv input grad"),
        vec![
            Tensor::new(
                c.weight.shape().to_vec(),
                reduce_in_order(&gws, cout * rows),
            )
            .expect("conv weight grad"),
            Tensor::new(vec![cout], reduce_in_order(&gbs, cout)).expect("conv bias grad"),
        ],
    )
}

fn conv_t_window<T: Scalar>(c: &ConvTranspose2d<T>, x: &Tensor<T>) -> Window {
    let s = x.shape();
    let ws = c.weight.shape();
    Window::for_transpose(ws[1], s[2], s[3], ws[2], c.stride, c.padding)
        .expect("validated by output_shape")
}

fn conv_t_forward<T: Scalar>(
    c: &ConvTranspose2d<T>,
    x: &Tensor<T>,
    out_shape: &[usize],
) -> Tensor<T> {
    let win = conv_t_window(c, x);
    let cin = c.weight.shape()[0];
    let (rows, pos) = (win.rows(), win.positions());
    let per_in = cin * pos;
    let per_out = win.image_len();
    let plane = win.height * win.width;
    let w = c.weight.data();
    let b = c.bias.data();
    let mut y = vec![T::zero(); out_shape[0] * per_out];
    y.par_chunks_mut(per_out)
        .zip(x.data().par_chunks(per_in))
        .for_each(|(yo, xi)| {
            let mut cols = vec![T::zero(); rows * pos];
            kernels::matmul_at_b(w, xi, &mut cols, cin, rows, pos);
            win.col2im(&cols, yo);
            for (ch, p) in yo.chunks_mut(plane).enumerate() {
                for v in p {
                    *v += b[ch];
                }
            }
        });
    Tensor::new(out_shape.to_vec(), y).expect("conv_t output shape")
}

fn conv_t_backward<T: Scalar>(
    c: &ConvTranspose2d<T>,
    x: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, ParamGrads<T>) {
    let win = conv_t_window(c, x);
    let cin = c.weight.shape()[0];
    let cout = c.weight.shape()[1];
    let (rows, pos) = (win.rows(), win.positions());
    let per_in = cin * pos;
    let per_out = win.image_len();
    let plane = win.height * win.width;
    let w = c.weight.data();
    let parts: Vec<(Vec<T>, Vec<T>, Vec<T>)> = x
        .data()
        .par_chunks(per_in)
        .zip(g.data().par_chunks(per_out))
        .map(|(xi, gi)| {
            let mut cols = vec![T::zero(); rows * pos];
            win.im2col(gi, &mut cols);
            let mut gx = vec![T::zero(); per_in];
            kernels::matmul(w, &cols, &mut gx, cin, rows, pos);
            let mut gw = vec![T::zero(); cin * rows];
            kernels::matmul_a_bt_acc(xi, &cols, &mut gw, cin, rows, pos);
            let gb: Vec<T> = gi.chunks(plane).map(kernels::sum).collect();
            (gx, gw, gb)
        })
        .collect();
    let mut gx = Vec::with_capacity(x.len());
    for p in &parts {
        gx.extend_from_slice(&p.0);
    }
    let gws: Vec<Vec<T>> = parts.iter().map(|p| p.1.clone()).collect();
    let gbs: Vec<Vec<T>> = parts.iter().map(|p| p.2.clone()).collect();
    (
        Tensor::new(x.shape().to_vec(), gx).expect("conv_t input grad"),
        vec![
            Tensor::new(c.weight.shape().to_vec(), reduce_in_order(&gws, cin * rows))
                .expect("conv_t weight grad"),
            Tensor::new(vec![cout], reduce_in_order(&gbs, cout)).expect("conv_t bias grad"),
        ],
    )
}

fn plane_stats<T: Scalar>(p: &[T], eps: f64) -> (T, T) {
    let m = T::from_f64(p.len() as f64);
    let mean = kernels::sum(p) / m;
    let mut var = T::zero();
    for &v in p {
        let d = v - mean;
        var += d * d;
    }
    var = var / m;
    (mean, (var + T::from_f64(eps)).sqrt().recip())
}

fn norm_forward<T: Scalar>(n: &ChannelNorm<T>, x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (c, plane) = (s[1], s[2] * s[3]);
    let mut y = x.data().to_vec();
    for (i, p) in y.chunks_mut(plane).enumerate() {
        let ch = i % c;
        let (mean, inv) = plane_stats(p, n.eps);
        let (ga, be) = (n.gamma.data()[ch], n.beta.data()[ch]);
        for v in p {
            *v = ga * (*v - mean) * inv + be;
        }
    }
    Tensor::new(s.to_vec(), y).expect("norm output")
}

fn norm_backward<T: Scalar>(
    n: &ChannelNorm<T>,
    x: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, ParamGrads<T>) {
    let s = x.shape();
    let (c, plane) = (s[1], s[2] * s[3]);
    let m = T::from_f64(plane as f64);
    let mut gx = vec![T::zero(); x.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for (i, ((xp, gp), gxp)) in x
        .data()
        .chunks(plane)
        .zip(g.data().chunks(plane))
        .zip(gx.chunks_mut(plane))
        .enumerate()
    {
        let ch = i % c;
        let (mean, inv) = plane_stats(xp, n.eps);
        let ga = n.gamma.data()[ch];
        let mut sum_g = T::zero();
        let mut sum_gxh = T::zero();
        for (&xv, &gv) in xp.iter().zip(gp) {
            let xh = (xv - mean) * inv;
            sum_g += gv;
            sum_gxh += gv * xh;
        }
        gg[ch] += sum_gxh;
        gb[ch] += sum_g;
        // dx = γ·inv·(g − mean(g) − x̂·mean(g·x̂))
        let (mg, mgx) = (sum_g / m, sum_gxh / m);
        for ((&xv, &gv), o) in xp.iter().zip(gp).zip(gxp.iter_mut()) {
            let xh = (xv - mean) * inv;
            *o = ga * inv * (gv - mg - xh * mgx);
        }
    }
    (
        Tensor::new(s.to_vec(), gx).expect("norm input grad"),
        vec![
            Tensor::new(vec![c], gg).expect("gamma grad"),
            Tensor::new(vec![c], gb).expect("beta grad"),
        ],
    )
}

fn embedding_rows<T: Scalar>(e: &Embedding<T>, x: &Tensor<T>) -> Result<Vec<usize>> {
    let rows = e.table.shape()[0];
    x.data()
        .iter()
        .map(|&v| {
            let f = v.as_f64();
            if f >= 0.0 && f.fract() == 0.0 && (f as usize) < rows {
                Ok(f as usize)
            } else {
                Err(Error::InvalidArgument(format!(
                    "embedding index {f} not a row of a {rows}-row table"
                )))
            }
        })
        .collect()
}

fn embedding_forward<T: Scalar>(
    e: &Embedding<T>,
    x: &Tensor<T>,
    out_shape: &[usize],
) -> Result<Tensor<T>> {
    let dim = e.table.shape()[1];
    let mut y = Vec::with_capacity(out_shape[0] * dim);
    for r in embedding_rows(e, x)? {
        y.extend_from_slice(&e.table.data()[r * dim..(r + 1) * dim]);
    }
    Tensor::new(out_shape.to_vec(), y)
}

fn embedding_backward<T: Scalar>(
    e: &Embedding<T>,
    x: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, ParamGrads<T>) {
    let dim = e.table.shape()[1];
    let mut gt = Tensor::zeros(e.table.shape());
    // Indices were validated by the forward pass that produced `g`.
    let rows = embedding_rows(e, x).unwrap_or_default();
    for (r, gr) in rows.into_iter().zip(g.data().chunks(dim)) {
        for (t, &v) in gt.data_mut()[r * dim..(r + 1) * dim].iter_mut().zip(gr) {
            *t += v;
        }
    }
    (Tensor::zeros(x.shape()), vec![gt])
}

fn pool_forward<T: Scalar>(x: &Tensor<T>, out_shape: &[usize]) -> Tensor<T> {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut y = vec![T::zero(); out_shape.iter().product()];
    for (yp, xp) in y.chunks_mut(oh * ow).zip(x.data().chunks(h * w)) {
        for oy in 0..oh {
            for ox in 0..ow {
                let (iy, ix) = (2 * oy, 2 * ox);
                yp[oy * ow + ox] = (xp[iy * w + ix] + xp[iy * w + ix + 1])
                    + (xp[(iy + 1) * w + ix] + xp[(iy + 1) * w + ix + 1]);
                yp[oy * ow + ox] *= quarter;
            }
        }
    }
    Tensor::new(out_shape.to_vec(), y).expect("pool output")
}

fn pool_backward<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut gx = vec![T::zero(); x.len()];
    for (gxp, gp) in gx.chunks_mut(h * w).zip(g.data().chunks(oh * ow)) {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = gp[oy * ow + ox] * quarter;
                let (iy, ix) = (2 * oy, 2 * ox);
                gxp[iy * w + ix] = v;
                gxp[iy * w + ix + 1] = v;
                gxp[(iy + 1) * w + ix] = v;
                gxp[(iy + 1) * w + ix + 1] = v;
            }
        }
    }
    Tensor::new(s.to_vec(), gx).expect("pool input grad")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = SeedStream::new(1).rng("img");
        let x = Tensor::<f32>::uniform(&[2, 1, 5, 6], 0.0, 1.0, &mut rng);
        let layer = Layer::Conv2d(Conv2d {
            weight: Tensor::full(&[1, 1, 1, 1], 1.0f32),
            bias: Tensor::zeros(&[1]),
            stride: 1,
            padding: 0,
        });
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums_window() {
        let layer = Layer::Conv2d(Conv2d {
            weight: Tensor::full(&[1, 1, 2, 2], 1.0),
            bias: Tensor::zeros(&[1]),
            stride: 1,
            padding: 0,
        });
        let y = layer
            .forward(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]))
            .unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn relu_and_sigmoid_backward_by_hand() {
        let (gx, _) = Layer::Relu
            .backward(&t(&[2], &[-1.0, 2.0]), &t(&[2], &[1.0, 1.0]))
            .unwrap();
        assert_eq!(gx.data(), &[0.0, 1.0]);
        let (gx, _) = Layer::Sigmoid
            .backward(&t(&[1], &[0.0]), &t(&[1], &[1.0]))
            .unwrap();
        assert_eq!(gx.data(), &[0.25]);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let mut rng = SeedStream::new(1).rng("w");
        let layer = Layer::<f32>::dense(3, 2, &mut rng);
        let err = layer.forward(&Tensor::zeros(&[4, 5])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dense") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn backward_rejects_wrong_upstream_and_nan() {
        let x = t(&[1, 2], &[0.0, 1.0]);
        assert!(Layer::Relu.backward(&x, &t(&[1, 3], &[0.0; 3])).is_err());
        let err = Layer::Relu
            .backward(&x, &t(&[1, 2], &[f64::NAN, 0.0]))
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn embedding_rejects_bad_index() {
        let mut rng = SeedStream::new(1).rng("e");
        let layer = Layer::<f64>::embedding(3, 4, 1.0, &mut rng);
        assert!(layer.forward(&t(&[2], &[0.0, 2.0])).is_ok());
        assert!(layer.forward(&t(&[1], &[3.0])).is_err());
        assert!(layer.forward(&t(&[1], &[0.5])).is_err());
    }

    #[test]
    fn forward_backward_leave_params_untouched() {
        let mut rng = SeedStream::new(3).rng("w");
        let layer = Layer::<f64>::conv2d(2, 3, 3, 1, 1, &mut rng);
        let before = layer.clone();
        let x = Tensor::randn(&[2, 2, 4, 4], 1.0, &mut rng);
        let y = layer.forward(&x).unwrap();
        layer.backward(&x, &y).unwrap();
        assert_eq!(layer, before);
    }
}
