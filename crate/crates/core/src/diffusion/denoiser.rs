use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Layer, Module, Scalar, Tensor};

/// Row of the class embedding used when the label is dropped.
pub const NULL_CLASS: usize = 2;

/// A network predicting the noise in `x_t` given the step and class.
///
/// `labels` holds 0, 1 or [`NULL_CLASS`] per sample.
pub trait EpsModel<T: Scalar>: Module<T> {
    type Trace;

    /// Shape of one sample, without the batch axis.
    fn sample_shape(&self) -> Vec<usize>;

    fn predict_trace(
        &self,
        x: &Tensor<T>,
        steps: &[usize],
        labels: &[usize],
    ) -> Result<(Tensor<T>, Self::Trace)>;

    /// Parameter gradients, in `named_params` order.
    fn backward(&self, trace: &Self::Trace, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>>;

    fn predict(&self, x: &Tensor<T>, steps: &[usize], labels: &[usize]) -> Result<Tensor<T>> {
        Ok(self.predict_trace(x, steps, labels)?.0)
    }
}

/// `[N, dim]` sinusoidal features of the step index.
pub fn step_features<T: Scalar>(steps: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        for i in 0..half {
            let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
            data.push(T::from_f64((t as f64 * freq).sin()));
        }
        for i in 0..half {
            let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
            data.push(T::from_f64((t as f64 * freq).cos()));
        }
    }
    Tensor::new(vec![steps.len(), 2 * half], data).expect("consistent length")
}

fn check_inputs(n: usize, steps: &[usize], labels: &[usize]) -> Result<()> {
    if steps.len() != n || labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "batch of {n} with {} steps and {} labels",
            steps.len(),
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y > NULL_CLASS) {
        return Err(Error::InvalidArgument(format!("class index {y}")));
    }
    Ok(())
}

fn label_tensor<T: Scalar>(labels: &[usize]) -> Tensor<T> {
    Tensor::from_fn(&[labels.len()], |i| T::from_f64(labels[i] as f64))
}

fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

fn relu_grad<T: Scalar>(pre: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    pre.zip_map(g, |v, g| if v > T::zero() { g } else { T::zero() })
}

/// `x[n, c, ..] += b[n, c]`
fn add_channel_bias<T: Scalar>(x: &mut Tensor<T>, b: &Tensor<T>) {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let plane = x.len() / (n * c);
    let bias = b.data();
    for (k, chunk) in x.data_mut().chunks_mut(plane).enumerate() {
        let v = bias[k];
        chunk.iter_mut().for_each(|p| *p += v);
    }
}

/// `[N, C, ..] -> [N, C]` sums over the trailing axes.
fn channel_sums<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let plane = x.len() / (n * c);
    let data = x
        .data()
        .chunks(plane)
        .map(crate::nn::kernels::sum)
        .collect();
    Tensor::new(vec![n, c], data).expect("consistent length")
}

/// Shared step-and-class conditioning: `relu(dense(features(t)) + table[y])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning<T = f32> {
    pub feature_dim: usize,
    pub time: Layer<T>,
    pub class: Layer<T>,
}

#[derive(Debug, Clone)]
pub struct ConditioningTrace<T> {
    features: Tensor<T>,
    labels: Tensor<T>,
    pre: Tensor<T>,
    pub out: Tensor<T>,
}

impl<T: Scalar> Conditioning<T> {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            feature_dim,
            time: Layer::dense(feature_dim, dim, rng),
            class: Layer::embedding(NULL_CLASS + 1, dim, 1.0, rng),
        }
    }

    fn forward(&self, steps: &[usize], labels: &[usize]) -> Result<ConditioningTrace<T>> {
        let features = step_features(steps, self.feature_dim);
        let labels = label_tensor(labels);
        let pre = self
            .time
            .forward(&features)?
            .add(&self.class.forward(&labels)?)?;
        let out = relu(&pre);
        Ok(ConditioningTrace {
            features,
            labels,
            pre,
            out,
        })
    }

    fn backward(&self, tr: &ConditioningTrace<T>, g: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let g = relu_grad(&tr.pre, g)?;
        let (_, mut grads) = self.time.backward(&tr.features, &g)?;
        grads.extend(self.class.backward(&tr.labels, &g)?.1);
        Ok(grads)
    }

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let time = self
            .time
            .params()
            .into_iter()
            .map(|(n, t)| (format!("time.{n}"), t));
        let class = self
            .class
            .params()
            .into_iter()
            .map(|(n, t)| (format!("class.{n}"), t));
        time.chain(class).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.time.params_mut();
        v.extend(self.class.params_mut());
        v
    }
}

/// conv → `+ proj(e)` per channel → relu
///
/// No normalization: a per-sample spatial norm would erase the signal level
/// of `x_t` that the noise estimate depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage<T = f32> {
    pub conv: Layer<T>,
    pub proj: Layer<T>,
}

#[derive(Debug, Clone)]
struct StageTrace<T> {
    input: Tensor<T>,
    pre: Tensor<T>,
}

impl<T: Scalar> Stage<T> {
    fn new<R: Rng + ?Sized>(conv: Layer<T>, channels: usize, emb: usize, rng: &mut R) -> Self {
        Self {
            conv,
            proj: Layer::dense_with_std(emb, channels, 0.02, rng),
        }
    }

    fn forward(&self, x: Tensor<T>, e: &Tensor<T>) -> Result<(Tensor<T>, StageTrace<T>)> {
        let mut pre = self.conv.forward(&x)?;
        add_channel_bias(&mut pre, &self.proj.forward(e)?);
        Ok((relu(&pre), StageTrace { input: x, pre }))
    }

    /// Returns the input gradient, the conditioning gradient and the stage's
    /// parameter gradients.
    fn backward(
        &self,
        tr: &StageTrace<T>,
        e: &Tensor<T>,
        g: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Vec<Tensor<T>>)> {
        let g = relu_grad(&tr.pre, g)?;
        let (ge, gproj) = self.proj.backward(e, &channel_sums(&g))?;
        let (gx, mut grads) = self.conv.backward(&tr.input, &g)?;
        grads.extend(gproj);
        Ok((gx, ge, grads))
    }

    fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        [("conv", &self.conv), ("proj", &self.proj)]
            .into_iter()
            .flat_map(|(part, l)| {
                l.params()
                    .into_iter()
                    .map(move |(n, t)| (format!("{prefix}.{part}.{n}"), t))
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.conv.params_mut();
        v.extend(self.proj.params_mut());
        v
    }
}

/// Small U-shaped noise predictor for `[N, 1, 32, 32]` inputs.
///
/// Two stride-2 downsampling stages, a middle stage and two transposed-conv
/// upsampling stages with additive skips from the matching resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser<T = f32> {
    pub base: usize,
    pub cond: Conditioning<T>,
    /// in, down, down, mid, up, up
    pub stages: Vec<Stage<T>>,
    pub out: Layer<T>,
}

#[derive(Debug, Clone)]
pub struct DenoiserTrace<T> {
    cond: ConditioningTrace<T>,
    stages: Vec<StageTrace<T>>,
    head_input: Tensor<T>,
}

pub const IMAGE_SIDE: usize = 32;

impl<T: Scalar> Denoiser<T> {
    pub fn new<R: Rng + ?Sized>(base: usize, rng: &mut R) -> Self {
        let (c, c2) = (base, 2 * base);
        let emb = 4 * base;
        let cond = Conditioning::new(2 * base, emb, rng);
        let up_std = |cin: usize| (2.0 / (cin * 4) as f64).sqrt();
        let convs = vec![
            (Layer::conv2d(1, c, 3, 1, 1, rng), c),
            (Layer::conv2d(c, c2, 4, 2, 1, rng), c2),
            (Layer::conv2d(c2, c2, 4, 2, 1, rng), c2),
            (Layer::conv2d(c2, c2, 3, 1, 1, rng), c2),
            (
                Layer::conv_transpose2d(c2, c2, 4, 2, 1, up_std(c2), rng),
                c2,
            ),
            (Layer::conv_transpose2d(c2, c, 4, 2, 1, up_std(c2), rng), c),
        ];
        let stages = convs
            .into_iter()
            .map(|(conv, ch)| Stage::new(conv, ch, emb, rng))
            .collect();
        let out = Layer::conv2d_with_std(c, 1, 3, 1, 1, 0.02, rng);
        Self {
            base,
            cond,
            stages,
            out,
        }
    }
}

impl<T: Scalar> Module<T> for Denoiser<T> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = self.cond.named_params();
        for (i, s) in self.stages.iter().enumerate() {
            v.extend(s.named_params(&format!("s{i}")));
        }
        v.extend(
            self.out
                .params()
                .into_iter()
                .map(|(n, t)| (format!("out.{n}"), t)),
        );
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.cond.params_mut();
        for s in &mut self.stages {
            v.extend(s.params_mut());
        }
        v.extend(self.out.params_mut());
        v
    }
}

impl<T: Scalar> EpsModel<T> for Denoiser<T> {
    type Trace = DenoiserTrace<T>;

    fn sample_shape(&self) -> Vec<usize> {
        vec![1, IMAGE_SIDE, IMAGE_SIDE]
    }

    fn predict_trace(
        &self,
        x: &Tensor<T>,
        steps: &[usize],
        labels: &[usize],
    ) -> Result<(Tensor<T>, Self::Trace)> {
        if x.shape().len() != 4 || x.shape()[1..] != [1, IMAGE_SIDE, IMAGE_SIDE] {
            return Err(Error::Shape {
                layer: "denoiser",
                expected: format!("[N, 1, {IMAGE_SIDE}, {IMAGE_SIDE}]"),
                got: x.shape().to_vec(),
            });
        }
        check_inputs(x.batch(), steps, labels)?;
        let cond = self.cond.forward(steps, labels)?;
        let e = &cond.out;
        let s = &self.stages;
        let (h0, t0) = s[0].forward(x.clone(), e)?;
        let (h1, t1) = s[1].forward(h0.clone(), e)?;
        let (h2, t2) = s[2].forward(h1.clone(), e)?;
        let (m, t3) = s[3].forward(h2.clone(), e)?;
        let (u1, t4) = s[4].forward(m.add(&h2)?, e)?;
        let (u2, t5) = s[5].forward(u1.add(&h1)?, e)?;
        let head_input = u2.add(&h0)?;
        let out = self.out.forward(&head_input)?;
        Ok((
            out,
            DenoiserTrace {
                cond,
                stages: vec![t0, t1, t2, t3, t4, t5],
                head_input,
            },
        ))
    }

    fn backward(&self, tr: &Self::Trace, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let e = &tr.cond.out;
        let s = &self.stages;
        let mut stage_grads: Vec<Vec<Tensor<T>>> = vec![Vec::new(); 6];
        let mut ge = Tensor::zeros(e.shape());
        let mut run = |i: usize, g: &Tensor<T>, ge: &mut Tensor<T>| -> Result<Tensor<T>> {
            let (gx, gei, grads) = s[i].backward(&tr.stages[i], e, g)?;
            ge.axpy(T::one(), &gei)?;
            stage_grads[i] = grads;
            Ok(gx)
        };

        let (g_head, out_grads) = self.out.backward(&tr.head_input, grad)?;
        let mut g_h0 = g_head.clone();
        let g_u1 = run(5, &g_head, &mut ge)?;
        let mut g_h1 = g_u1.clone();
        let g_m = run(4, &g_u1, &mut ge)?;
        let mut g_h2 = g_m.clone();
        g_h2.axpy(T::one(), &run(3, &g_m, &mut ge)?)?;
        g_h1.axpy(T::one(), &run(2, &g_h2, &mut ge)?)?;
        g_h0.axpy(T::one(), &run(1, &g_h1, &mut ge)?)?;
        run(0, &g_h0, &mut ge)?;

        let mut grads = self.cond.backward(&tr.cond, &ge)?;
        grads.extend(stage_grads.into_iter().flatten());
        grads.extend(out_grads);
        Ok(grads)
    }
}

/// Noise predictor for `[N, 1]` data, used for low-dimensional checks.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser<T = f32> {
    pub cond: Conditioning<T>,
    pub input: Layer<T>,
    pub hidden: Layer<T>,
    pub out: Layer<T>,
}

#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    cond: ConditioningTrace<T>,
    x: Tensor<T>,
    pre1: Tensor<T>,
    h1: Tensor<T>,
    pre2: Tensor<T>,
    h2: Tensor<T>,
}

impl<T: Scalar> MlpDenoiser<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        Self {
            cond: Conditioning::new(16, width, rng),
            input: Layer::dense(1, width, rng),
            hidden: Layer::dense(width, width, rng),
            out: Layer::dense_with_std(width, 1, 0.01, rng),
        }
    }
}

impl<T: Scalar> Module<T> for MlpDenoiser<T> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = self.cond.named_params();
        for (name, l) in [
            ("input", &self.input),
            ("hidden", &self.hidden),
            ("out", &self.out),
        ] {
            v.extend(
                l.params()
                    .into_iter()
                    .map(|(n, t)| (format!("{name}.{n}"), t)),
            );
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.cond.params_mut();
        v.extend(self.input.params_mut());
        v.extend(self.hidden.params_mut());
        v.extend(self.out.params_mut());
        v
    }
}

impl<T: Scalar> EpsModel<T> for MlpDenoiser<T> {
    type Trace = MlpTrace<T>;

    fn sample_shape(&self) -> Vec<usize> {
        vec![1]
    }

    fn predict_trace(
        &self,
        x: &Tensor<T>,
        steps: &[usize],
        labels: &[usize],
    ) -> Result<(Tensor<T>, Self::Trace)> {
        if x.shape().len() != 2 || x.shape()[1] != 1 {
            return Err(Error::Shape {
                layer: "mlp denoiser",
                expected: "[N, 1]".into(),
                got: x.shape().to_vec(),
            });
        }
        check_inputs(x.batch(), steps, labels)?;
        let cond = self.cond.forward(steps, labels)?;
        let pre1 = self.input.forward(x)?.add(&cond.out)?;
        let h1 = relu(&pre1);
        let pre2 = self.hidden.forward(&h1)?;
        let h2 = relu(&pre2);
        let out = self.out.forward(&h2)?;
        Ok((
            out,
            MlpTrace {
                cond,
                x: x.clone(),
                pre1,
                h1,
                pre2,
                h2,
            },
        ))
    }

    fn backward(&self, tr: &Self::Trace, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (g, out_grads) = self.out.backward(&tr.h2, grad)?;
        let g = relu_grad(&tr.pre2, &g)?;
        let (g, hidden_grads) = self.hidden.backward(&tr.h1, &g)?;
        let g = relu_grad(&tr.pre1, &g)?;
        let (_, input_grads) = self.input.backward(&tr.x, &g)?;
        let mut grads = self.cond.backward(&tr.cond, &g)?;
        grads.extend(input_grads);
        grads.extend(hidden_grads);
        grads.extend(out_grads);
        Ok(grads)
    }
}
