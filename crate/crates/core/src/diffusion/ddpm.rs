use rand::Rng;
use rand_distr::StandardNormal;

use super::denoiser::{Denoiser, EpsModel, NULL_CLASS};
use super::schedule::{make_schedule, q_sample_with, NoiseSchedule};
use crate::busgen::{ClientShard, SplitTag};
use crate::error::{Error, Result};
use crate::nn::{mse, AdamW, AdamWConfig, Scalar, Tensor};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    /// Probability of replacing a training label with the null class.
    pub p_drop: f64,
    /// `ε̂ = (1 + w)·ε(y) − w·ε(null)`
    pub w_g: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            p_drop: 0.1,
            w_g: 1.5,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::InvalidArgument(format!(
                "p_drop {} outside [0, 1)",
                self.p_drop
            )));
        }
        if !(self.w_g >= 0.0 && self.w_g.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "guidance scale {} is negative",
                self.w_g
            )));
        }
        Ok(())
    }
}

/// Guided noise estimate `(1 + w)·cond − w·uncond`, evaluated as
/// `cond + w·(cond − uncond)` so equal predictions pass through unchanged.
pub fn guided_eps<T: Scalar>(cond: &Tensor<T>, uncond: &Tensor<T>, w: f64) -> Result<Tensor<T>> {
    if w == 0.0 {
        return Ok(cond.clone());
    }
    let w = T::from_f64(w);
    cond.zip_map(uncond, |c, u| c + w * (c - u))
}

fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::from_f64(rng.sample::<f64, _>(StandardNormal))
}

/// Per-sample step, label and dropout for one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub steps: Vec<usize>,
    /// Class index per sample, [`NULL_CLASS`] where dropped.
    pub labels: Vec<usize>,
    pub dropped: usize,
}

pub fn draw_conditioning<R: Rng + ?Sized>(
    rng: &mut R,
    labels: &[u8],
    steps: usize,
    p_drop: f64,
) -> Result<Conditioning> {
    let mut out = Conditioning {
        steps: Vec::with_capacity(labels.len()),
        labels: Vec::with_capacity(labels.len()),
        dropped: 0,
    };
    for &y in labels {
        if y > 1 {
            return Err(Error::InvalidLabel(y as f64));
        }
        out.steps.push(rng.random_range(1..=steps));
        if rng.random_bool(p_drop) {
            out.labels.push(NULL_CLASS);
            out.dropped += 1;
        } else {
            out.labels.push(y as usize);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats<T> {
    pub loss: T,
    pub dropped: usize,
}

/// Noised inputs and the noise that produced them.
pub fn noised_batch<T: Scalar, R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    x0: &Tensor<T>,
    steps: &[usize],
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let eps = Tensor::from_fn(x0.shape(), |_| normal(rng));
    let n = x0.batch();
    let per = x0.len() / n.max(1);
    let mut xt = Vec::with_capacity(x0.len());
    for i in 0..n {
        let t = steps[i];
        schedule.check_step(t)?;
        let slice =
            |v: &Tensor<T>| Tensor::new(vec![per], v.data()[i * per..(i + 1) * per].to_vec());
        let noisy = q_sample_with(schedule.alpha_bar_at(t), &slice(x0)?, &slice(&eps)?)?;
        xt.extend_from_slice(noisy.data());
    }
    Ok((Tensor::new(x0.shape().to_vec(), xt)?, eps))
}

/// Loss and parameter gradients of the ε-prediction objective for one batch.
pub fn ddpm_loss_and_grads<T: Scalar, M: EpsModel<T>, R: Rng + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    x0: &Tensor<T>,
    labels: &[u8],
    guidance: &GuidanceConfig,
    rng: &mut R,
) -> Result<(StepStats<T>, Vec<Tensor<T>>)> {
    if x0.batch() != labels.len() || labels.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} images with {} labels",
            x0.batch(),
            labels.len()
        )));
    }
    let cond = draw_conditioning(rng, labels, schedule.steps(), guidance.p_drop)?;
    let (xt, eps) = noised_batch(schedule, x0, &cond.steps, rng)?;
    let (pred, trace) = model.predict_trace(&xt, &cond.steps, &cond.labels)?;
    let (loss, g) = mse(&pred, &eps)?;
    let grads = model.backward(&trace, &g)?;
    Ok((
        StepStats {
            loss,
            dropped: cond.dropped,
        },
        grads,
    ))
}

/// One AdamW step on the simplified objective.
pub fn ddpm_train_step<T: Scalar, M: EpsModel<T>, R: Rng + ?Sized>(
    model: &mut M,
    opt: &mut AdamW<T>,
    schedule: &NoiseSchedule,
    x0: &Tensor<T>,
    labels: &[u8],
    guidance: &GuidanceConfig,
    rng: &mut R,
) -> Result<StepStats<T>> {
    let (stats, grads) = ddpm_loss_and_grads(model, schedule, x0, labels, guidance, rng)?;
    opt.step(model.params_mut(), &grads)?;
    Ok(stats)
}

/// `x_{t−1}` from `x_t` and a noise estimate. `xi` is ignored at `t = 1`.
pub fn reverse_step_with<T: Scalar>(
    schedule: &NoiseSchedule,
    xt: &Tensor<T>,
    t: usize,
    eps_hat: &Tensor<T>,
    xi: &Tensor<T>,
) -> Result<Tensor<T>> {
    schedule.check_step(t)?;
    let beta = schedule.beta_at(t);
    let coef = T::from_f64(beta / (1.0 - schedule.alpha_bar_at(t)).sqrt());
    let inv = T::from_f64(1.0 / schedule.alpha_at(t).sqrt());
    let mean = xt.zip_map(eps_hat, |x, e| (x - coef * e) * inv)?;
    if t == 1 {
        return Ok(mean);
    }
    let sigma = T::from_f64(beta.sqrt());
    mean.zip_map(xi, |m, z| m + sigma * z)
}

/// Guided noise estimate for a batch at one step.
pub fn guided_prediction<T: Scalar, M: EpsModel<T>>(
    model: &M,
    xt: &Tensor<T>,
    t: usize,
    labels: &[usize],
    w: f64,
) -> Result<Tensor<T>> {
    let n = xt.batch();
    if w == 0.0 {
        return model.predict(xt, &vec![t; n], labels);
    }
    let both = Tensor::concat_batch(&[xt, xt])?;
    let mut ys = labels.to_vec();
    ys.extend(std::iter::repeat_n(NULL_CLASS, n));
    let pred = model.predict(&both, &vec![t; 2 * n], &ys)?;
    guided_eps(&pred.slice_batch(0, n)?, &pred.slice_batch(n, 2 * n)?, w)
}

pub fn reverse_step<T: Scalar, M: EpsModel<T>, R: Rng + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    xt: &Tensor<T>,
    t: usize,
    labels: &[usize],
    guidance: &GuidanceConfig,
    rng: &mut R,
) -> Result<Tensor<T>> {
    schedule.check_step(t)?;
    let eps_hat = guided_prediction(model, xt, t, labels, guidance.w_g)?;
    let xi = Tensor::from_fn(xt.shape(), |_| normal(rng));
    reverse_step_with(schedule, xt, t, &eps_hat, &xi)
}

const SAMPLE_CHUNK: usize = 50;

/// Full ancestral chains for `count` samples of class `label`, in model space.
///
/// Sample `i` draws all of its noise from its own stream, so results do not
/// depend on how samples are grouped into batches.
pub fn ddpm_chain<T: Scalar, M: EpsModel<T>>(
    model: &M,
    schedule: &NoiseSchedule,
    count: usize,
    label: u8,
    guidance: &GuidanceConfig,
    seed: u64,
) -> Result<Tensor<T>> {
    if label > 1 {
        return Err(Error::InvalidLabel(label as f64));
    }
    guidance.validate()?;
    let shape = model.sample_shape();
    let per: usize = shape.iter().product();
    let mut full_shape = vec![count];
    full_shape.extend(&shape);
    let stream = SeedStream::new(seed).child("ddpm-sample");
    let mut out = Vec::with_capacity(count * per);
    for start in (0..count).step_by(SAMPLE_CHUNK) {
        let n = SAMPLE_CHUNK.min(count - start);
        let mut rngs: Vec<_> = (start..start + n)
            .map(|i| stream.rng(&i.to_string()))
            .collect();
        let mut batch_shape = vec![n];
        batch_shape.extend(&shape);
        let draw = |rngs: &mut [crate::rng::StreamRng]| {
            let data = rngs
                .iter_mut()
                .flat_map(|r| (0..per).map(|_| normal::<T, _>(r)).collect::<Vec<_>>())
                .collect();
            Tensor::new(batch_shape.clone(), data)
        };
        let labels = vec![label as usize; n];
        let mut x = draw(&mut rngs)?;
        for t in (1..=schedule.steps()).rev() {
            let eps_hat = guided_prediction(model, &x, t, &labels, guidance.w_g)?;
            let xi = if t > 1 {
                draw(&mut rngs)?
            } else {
                Tensor::zeros(x.shape())
            };
            x = reverse_step_with(schedule, &x, t, &eps_hat, &xi)?;
        }
        out.extend_from_slice(x.ensure_finite("ddpm sample")?.data());
    }
    Tensor::new(full_shape, out)
}

/// Generated images in `[0, 1]`, each `[1, 32, 32]`, with their label.
pub fn ddpm_sample(
    model: &Denoiser<f32>,
    schedule: &NoiseSchedule,
    count: usize,
    label: u8,
    guidance: &GuidanceConfig,
    seed: u64,
) -> Result<Vec<(Tensor<f32>, u8)>> {
    let x = ddpm_chain(model, schedule, count, label, guidance, seed)?;
    let side = super::denoiser::IMAGE_SIDE;
    (0..count)
        .map(|i| {
            let img = x
                .slice_batch(i, i + 1)?
                .map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
                .reshape(&[1, side, side])?;
            Ok((img, label))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpmTrainConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub base_channels: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub guidance: GuidanceConfig,
    pub seed: u64,
}

impl Default for DdpmTrainConfig {
    fn default() -> Self {
        Self {
            timesteps: super::schedule::DEFAULT_TIMESTEPS,
            beta_start: super::schedule::DEFAULT_BETA_START,
            beta_end: super::schedule::DEFAULT_BETA_END,
            base_channels: 16,
            steps: 3000,
            batch_size: 32,
            lr: 1e-3,
            guidance: GuidanceConfig::default(),
            seed: 0,
        }
    }
}

impl DdpmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.guidance.validate()?;
        if self.base_channels == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "base_channels and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.lr)));
        }
        make_schedule(self.timesteps, self.beta_start, self.beta_end).map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.timesteps, self.beta_start, self.beta_end)
    }
}

fn optimizer(lr: f32) -> AdamW<f32> {
    AdamW::new(AdamWConfig {
        lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    })
}

/// Trains one class-conditioned denoiser on the train and val images of
/// `data`; returns it with the per-step loss.
pub fn train_ddpm(
    data: &ClientShard,
    config: &DdpmTrainConfig,
) -> Result<(Denoiser<f32>, Vec<f32>)> {
    config.validate()?;
    if let Some(i) = data
        .tags
        .iter()
        .position(|t| !matches!(t, SplitTag::Train | SplitTag::Val))
    {
        return Err(Error::Leakage(format!(
            "image {i} of client {} is tagged {:?}",
            data.client_id, data.tags[i]
        )));
    }
    if data.images.is_empty() {
        return Err(Error::Empty("diffusion training set".into()));
    }
    let schedule = config.schedule()?;
    let stream = SeedStream::new(config.seed).child("ddpm");
    let mut model = Denoiser::new(config.base_channels, &mut stream.rng("init"));
    let mut opt = optimizer(config.lr);
    let mut rng = stream.rng("train");
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..data.images.len()))
            .collect();
        let images: Vec<Tensor<f32>> = idx
            .iter()
            .map(|&i| data.images[i].map(|v| 2.0 * v - 1.0))
            .collect();
        let refs: Vec<&Tensor<f32>> = images.iter().collect();
        let x0 = Tensor::stack(&refs)?;
        let labels: Vec<u8> = idx.iter().map(|&i| data.labels[i]).collect();
        let stats = ddpm_train_step(
            &mut model,
            &mut opt,
            &schedule,
            &x0,
            &labels,
            &config.guidance,
            &mut rng,
        )?;
        if !stats.loss.is_finite() {
            return Err(Error::NonFinite("diffusion loss".into()));
        }
        losses.push(stats.loss);
    }
    Ok((model, losses))
}
