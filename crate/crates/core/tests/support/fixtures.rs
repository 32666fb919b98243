//! Random values for round-trip and aggregation tests.

use fedsynth::busgen::{ClientShard, SplitTag};
use fedsynth::nn::{AdamW, AdamWConfig, ParamSet, Tensor};
use rand::Rng;

pub fn random_shape(rng: &mut impl Rng) -> Vec<usize> {
    let rank = rng.random_range(1..=4);
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

pub fn random_param_set(rng: &mut impl Rng) -> ParamSet<f32> {
    let n = rng.random_range(1..=5);
    ParamSet::new(
        (0..n)
            .map(|i| {
                (
                    format!("{i}.w{}", rng.random_range(0..100)),
                    Tensor::randn(&random_shape(rng), 1.0, rng),
                )
            })
            .collect(),
    )
    .unwrap()
}

/// A set with the same names and shapes as `like` but fresh values.
pub fn resample(like: &ParamSet<f32>, rng: &mut impl Rng) -> ParamSet<f32> {
    ParamSet::new(
        like.iter()
            .map(|(n, t)| (n.to_string(), Tensor::randn(t.shape(), 1.0, rng)))
            .collect(),
    )
    .unwrap()
}

pub fn random_optimizer(params: &ParamSet<f32>, rng: &mut impl Rng) -> AdamW<f32> {
    let mut opt = AdamW::new(AdamWConfig {
        lr: rng.random_range(1e-5..1e-2),
        ..AdamWConfig::default()
    });
    if rng.random_bool(0.8) {
        opt.step = rng.random_range(1..10_000);
        opt.m = params
            .tensors()
            .map(|t| Tensor::randn(t.shape(), 0.1, rng))
            .collect();
        opt.v = params
            .tensors()
            .map(|t| Tensor::uniform(t.shape(), 0.0, 0.1, rng))
            .collect();
    }
    opt
}

pub fn random_shard(rng: &mut impl Rng) -> ClientShard {
    let side = rng.random_range(1..=6);
    let n = rng.random_range(0..=6);
    let tags = [
        SplitTag::Train,
        SplitTag::Val,
        SplitTag::Test,
        SplitTag::Unsplit,
    ];
    ClientShard::new(
        rng.random_range(0..3),
        side,
        (0..n)
            .map(|_| Tensor::uniform(&[1, side, side], 0.0, 1.0, rng))
            .collect(),
        (0..n).map(|_| rng.random_range(0..=1)).collect(),
        (0..n).map(|_| tags[rng.random_range(0..4)]).collect(),
    )
    .unwrap()
}
