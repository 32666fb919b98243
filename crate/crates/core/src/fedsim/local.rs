use rand::seq::SliceRandom;

use crate::busgen::{ClientShard, SplitTag};
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Module, ParamSet, Tensor};
use crate::rng::SeedStream;

use super::config::FederationConfig;
use super::model::{label_tensor, load_classifier, train_step, Prox};
use super::pool::SyntheticPool;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub params: ParamSet<f32>,
    /// Mean loss over the real-data batches of the last epoch.
    pub train_loss: f64,
    pub steps: usize,
}

pub(crate) fn batch_of(
    images: &[Tensor<f32>],
    labels: &[u8],
    idx: &[usize],
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let picked: Vec<&Tensor<f32>> = idx.iter().map(|&i| &images[i]).collect();
    let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
    Ok((Tensor::stack(&picked)?, label_tensor(&y)))
}

/// Stream that shuffles client `client`'s data in 0-based `round`.
pub fn shuffle_stream(seed: u64, round: usize, client: u16) -> SeedStream {
    SeedStream::new(seed)
        .child("local")
        .child(&format!("round{round}"))
        .child(&format!("client{client}"))
}

fn optimizer(config: &FederationConfig, lr: f32) -> AdamW<f32> {
    AdamW::new(AdamWConfig {
        lr,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    })
}

/// One client's round: `local_epochs` passes of AdamW over its train split,
/// starting from `global`. Under FedProx every gradient gets `μ (w − w^t)`.
/// In client-injection mode the synthetic batches `synthetic` run first, at
/// the synthetic learning rate.
pub fn local_update(
    global: &ParamSet<f32>,
    shard: &ClientShard,
    config: &FederationConfig,
    round: usize,
    synthetic: Option<(&SyntheticPool, &[usize])>,
) -> Result<LocalResult> {
    let train = shard.indices(SplitTag::Train);
    if train.is_empty() {
        return Err(Error::Empty(format!(
            "train split of client {}",
            shard.client_id
        )));
    }
    let mut model = load_classifier(global)?;
    let decay = config.decay_at(round);
    let mut opt = optimizer(config, config.lr_synthetic * decay);
    let mu = config.effective_mu().map(|m| m as f32);
    let prox = mu.map(|mu| Prox { mu, anchor: global });
    let mut steps = 0;

    if let Some((pool, idx)) = synthetic {
        for chunk in idx.chunks(config.batch_size) {
            let (x, y) = batch_of(&pool.images, &pool.labels, chunk)?;
            train_step(&mut model, &mut opt, &x, &y, prox)?;
            steps += 1;
        }
    }
    opt.set_lr(config.lr_real * decay);

    let mut rng = shuffle_stream(config.seed, round, shard.client_id).rng("order");
    let mut train_loss = 0.0;
    for _ in 0..config.local_epochs {
        let mut order = train.clone();
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = batch_of(&shard.images, &shard.labels, chunk)?;
            sum += train_step(&mut model, &mut opt, &x, &y, prox)? as f64;
            batches += 1;
            steps += 1;
        }
        train_loss = sum / batches as f64;
    }
    Ok(LocalResult {
        params: model.param_set(),
        train_loss,
        steps,
    })
}

/// Algorithm 1's "update w^t on 𝒮": AdamW at the synthetic learning rate over
/// `synthetic_count` pool images drawn for `round`. Returns the updated
/// parameters and the number of optimizer steps.
pub fn synthetic_update(
    global: &ParamSet<f32>,
    pool: Option<&SyntheticPool>,
    config: &FederationConfig,
    round: usize,
) -> Result<(ParamSet<f32>, usize)> {
    if config.synthetic_count == 0 {
        return Ok((global.clone(), 0));
    }
    let pool = pool.ok_or_else(|| Error::Empty("synthetic pool".into()))?;
    let idx = pool.draw(config.seed, round, config.synthetic_count)?;
    let mut model = load_classifier(global)?;
    let mut opt = optimizer(config, config.lr_synthetic * config.decay_at(round));
    let mut steps = 0;
    for chunk in idx.chunks(config.batch_size) {
        let (x, y) = batch_of(&pool.images, &pool.labels, chunk)?;
        train_step(&mut model, &mut opt, &x, &y, None)?;
        steps += 1;
    }
    Ok((model.param_set(), steps))
}
