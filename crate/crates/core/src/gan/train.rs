use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::busgen::{Class, ClientShard, SplitTag};
use crate::error::{Error, Result};
use crate::metrics::fmt_metric;
use crate::nn::{bce_soft, AdamW, AdamWConfig, Module, Scalar, Tensor};
use crate::rng::SeedStream;

use super::model::{GanPair, LATENT_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_g: f32,
    pub lr_d: f32,
    pub seed: u64,
    /// Real labels become `1 - smoothing`.
    pub smoothing: f64,
    /// Train one pair per client instead of one on the pooled data.
    pub per_client: bool,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr_g: 2e-4,
            lr_d: 2e-4,
            seed: 0,
            smoothing: 0.1,
            per_client: false,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr_g > 0.0) || !(self.lr_d > 0.0) {
            return Err(Error::InvalidArgument(
                "GAN epochs, batch size and learning rates must be positive".into(),
            ));
        }
        if !(0.0..=0.2).contains(&self.smoothing) {
            return Err(Error::InvalidArgument(
                "label smoothing must lie in [0, 0.2]".into(),
            ));
        }
        Ok(())
    }
}

/// GAN optimizers use β1 = 0.5 and no weight decay.
fn gan_optimizer<T: Scalar>(lr: f32) -> AdamW<T> {
    AdamW::new(AdamWConfig {
        lr,
        beta1: 0.5,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    })
}

fn column<T: Scalar>(n: usize, v: f64) -> Tensor<T> {
    Tensor::full(&[n, 1], T::from_f64(v))
}

/// `−[log D(x) + log(1 − D(G(z)))]` (real targets `1 − smoothing`) and its
/// gradient w.r.t. the discriminator parameters.
pub fn d_loss_and_grads<T: Scalar>(
    pair: &GanPair<T>,
    real: &Tensor<T>,
    z: &Tensor<T>,
    smoothing: f64,
) -> Result<(T, Vec<Tensor<T>>)> {
    let fake = pair.generator.forward(z)?;
    let d = &pair.discriminator;
    let tr = d.forward_trace(&GanPair::to_signed(real))?;
    let (lr, gr) = bce_soft(tr.output(), &column(real.batch(), 1.0 - smoothing))?;
    if !lr.is_finite() {
        return Err(Error::NonFinite(
            "discriminator loss on the real batch".into(),
        ));
    }
    let tf = d.forward_trace(&fake)?;
    let (lf, gf) = bce_soft(tf.output(), &column(z.batch(), 0.0))?;
    if !lf.is_finite() {
        return Err(Error::NonFinite(
            "discriminator loss on the generated batch".into(),
        ));
    }
    let (_, mut grads) = d.backward(&tr, &gr)?;
    let (_, grads_f) = d.backward(&tf, &gf)?;
    for (g, h) in grads.iter_mut().zip(&grads_f) {
        g.axpy(T::one(), h)?;
    }
    Ok((lr + lf, grads))
}

/// Non-saturating `−log D(G(z))` and its gradient w.r.t. the generator
/// parameters, through a frozen discriminator.
pub fn g_loss_and_grads<T: Scalar>(
    pair: &GanPair<T>,
    z: &Tensor<T>,
) -> Result<(T, Vec<Tensor<T>>)> {
    let tg = pair.generator.forward_trace(z)?;
    let td = pair.discriminator.forward_trace(tg.output())?;
    let (loss, g) = bce_soft(td.output(), &column(z.batch(), 1.0))?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("generator loss".into()));
    }
    let (gx, _) = pair.discriminator.backward(&td, &g)?;
    let (_, grads) = pair.generator.backward(&tg, &gx)?;
    Ok((loss, grads))
}

/// One AdamW step on the discriminator. The generator is not touched.
pub fn d_step<T: Scalar>(
    pair: &mut GanPair<T>,
    opt: &mut AdamW<T>,
    real: &Tensor<T>,
    z: &Tensor<T>,
    smoothing: f64,
) -> Result<T> {
    let (loss, grads) = d_loss_and_grads(pair, real, z, smoothing)?;
    opt.step(pair.discriminator.params_mut(), &grads)?;
    Ok(loss)
}

/// One AdamW step on the generator. The discriminator is not touched.
pub fn g_step<T: Scalar>(pair: &mut GanPair<T>, opt: &mut AdamW<T>, z: &Tensor<T>) -> Result<T> {
    let (loss, grads) = g_loss_and_grads(pair, z)?;
    opt.step(pair.generator.params_mut(), &grads)?;
    Ok(loss)
}

/// Pool the train and val images across `shards`, of one class or of both.
/// Test images are never copied.
pub fn generator_training_set(shards: &[ClientShard], class: Option<Class>) -> Result<ClientShard> {
    let (mut images, mut labels, mut tags) = (Vec::new(), Vec::new(), Vec::new());
    let side = shards.first().map_or(crate::busgen::IMAGE_SIDE, |s| s.side);
    for s in shards {
        for i in 0..s.len() {
            if class.is_none_or(|c| s.labels[i] == c.label())
                && matches!(s.tags[i], SplitTag::Train | SplitTag::Val)
            {
                images.push(s.images[i].clone());
                labels.push(s.labels[i]);
                tags.push(s.tags[i]);
            }
        }
    }
    ClientShard::new(u16::MAX, side, images, labels, tags)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

fn latent<T: Scalar>(n: usize, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::randn(&[n, LATENT_DIM, 1, 1], 1.0, rng)
}

/// Train a pair for `class` on `data`, alternating one discriminator and one
/// generator step per minibatch. Any test-tagged image in `data` is refused.
pub fn train_gan(
    class: Class,
    data: &ClientShard,
    config: &GanTrainConfig,
) -> Result<(GanPair<f32>, Vec<EpochLoss>)> {
    config.validate()?;
    if let Some(i) = data
        .tags
        .iter()
        .position(|&t| !matches!(t, SplitTag::Train | SplitTag::Val))
    {
        return Err(Error::Leakage(format!(
            "image {i} of the generator training set is tagged {}",
            data.tags[i].name()
        )));
    }
    let idx: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels[i] == class.label())
        .collect();
    if idx.is_empty() {
        return Err(Error::Empty(format!("{} training images", class.name())));
    }
    let stream = SeedStream::new(config.seed)
        .child("gan")
        .child(class.name());
    let mut pair = GanPair::new(class, &mut stream.rng("init"));
    let mut opt_d = gan_optimizer(config.lr_d);
    let mut opt_g = gan_optimizer(config.lr_g);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = stream.rng(&format!("epoch{epoch}"));
        let mut order = idx.clone();
        order.shuffle(&mut rng);
        let (mut dsum, mut gsum, mut n) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let picked: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &data.images[i]).collect();
            let real = Tensor::stack(&picked)?;
            let z = latent(chunk.len(), &mut rng);
            dsum += d_step(&mut pair, &mut opt_d, &real, &z, config.smoothing)? as f64;
            let z = latent(chunk.len(), &mut rng);
            gsum += g_step(&mut pair, &mut opt_g, &z)? as f64;
            n += 1;
        }
        history.push(EpochLoss {
            epoch: epoch + 1,
            d_loss: dsum / n as f64,
            g_loss: gsum / n as f64,
        });
    }
    Ok((pair, history))
}

pub fn loss_history_csv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,d_loss,g_loss\n");
    for h in history {
        let _ = writeln!(
            s,
            "{},{},{}",
            h.epoch,
            fmt_metric(h.d_loss),
            fmt_metric(h.g_loss)
        );
    }
    s
}

/// `count` images in `[0, 1]` labelled with the pair's class. Image `i`
/// depends only on `(seed, i)`.
pub fn gan_sample(pair: &GanPair<f32>, count: usize, seed: u64) -> Result<Vec<(Tensor<f32>, u8)>> {
    let stream = SeedStream::new(seed).child("gan-sample");
    let mut out = Vec::with_capacity(count);
    let chunk = 64;
    for start in (0..count).step_by(chunk) {
        let n = chunk.min(count - start);
        let mut data = Vec::with_capacity(n * LATENT_DIM);
        for i in start..start + n {
            let z: Tensor<f32> = latent(1, &mut stream.rng(&i.to_string()));
            data.extend_from_slice(z.data());
        }
        let z = Tensor::new(vec![n, LATENT_DIM, 1, 1], data)?;
        let images = GanPair::to_unit(&pair.generator.forward(&z)?);
        for k in 0..n {
            out.push((
                images.slice_batch(k, k + 1)?.reshape(&[1, 32, 32])?,
                pair.class.label(),
            ));
        }
    }
    Ok(out)
}
