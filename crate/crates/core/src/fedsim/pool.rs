use rand::seq::SliceRandom;

use crate::busgen::{ClientShard, SplitTag};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticSource {
    Dcgan,
    Ddpm,
}

impl SyntheticSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dcgan" => Ok(SyntheticSource::Dcgan),
            "ddpm" => Ok(SyntheticSource::Ddpm),
            _ => Err(Error::InvalidArgument(format!(
                "unknown synthetic source {s:?}"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SyntheticSource::Dcgan => "dcgan",
            SyntheticSource::Ddpm => "ddpm",
        }
    }
}

/// Labelled generator output shared identically by every client.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPool {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<u8>,
    pub source: SyntheticSource,
}

impl SyntheticPool {
    pub fn new(images: Vec<Tensor<f32>>, labels: Vec<u8>, source: SyntheticSource) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidArgument(
                "pool images and labels differ in length".into(),
            ));
        }
        Ok(Self {
            images,
            labels,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Pool shards carry no split; every tag must be `Unsplit`.
    pub fn from_shard(shard: ClientShard, source: SyntheticSource) -> Result<Self> {
        if shard.tags.iter().any(|&t| t != SplitTag::Unsplit) {
            return Err(Error::InvalidArgument(
                "synthetic pool images must be unsplit".into(),
            ));
        }
        Self::new(shard.images, shard.labels, source)
    }

    pub fn to_shard(&self, client_id: u16) -> Result<ClientShard> {
        let side = self.images.first().map(|t| t.shape()[1]).unwrap_or(32);
        ClientShard::new(
            client_id,
            side,
            self.images.clone(),
            self.labels.clone(),
            vec![SplitTag::Unsplit; self.len()],
        )
    }

    /// Indices used in 0-based `round` when `count` images are drawn per
    /// round. Draws walk through successive seeded permutations of the pool;
    /// when the current permutation has fewer than `count` left it is
    /// discarded and a fresh one starts. The result depends only on
    /// `(seed, round, count)`, so a resumed run draws the same images.
    pub fn draw(&self, seed: u64, round: usize, count: usize) -> Result<Vec<usize>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        if self.is_empty() {
            return Err(Error::Empty("synthetic pool".into()));
        }
        if count > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {count} distinct images from a pool of {}",
                self.len()
            )));
        }
        let per_epoch = self.len() / count;
        let epoch = round / per_epoch;
        let offset = (round % per_epoch) * count;
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.shuffle(&mut SeedStream::new(seed).child("pool").rng(&epoch.to_string()));
        Ok(perm[offset..offset + count].to_vec())
    }
}
