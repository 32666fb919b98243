use crate::busgen::{ClientShard, SplitTag};
use crate::error::{Error, Result};
use crate::nn::{Sequential, Tensor};

/// A score of at least this value predicts the positive (malignant) class.
pub const THRESHOLD: f64 = 0.5;

/// Predicted malignancy probabilities with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::Empty("scored set".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidLabel(l as f64));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

pub fn accuracy(s: &ScoredSet, threshold: f64) -> f64 {
    let hits = s
        .scores
        .iter()
        .zip(&s.labels)
        .filter(|(&p, &l)| u8::from(p >= threshold) == l)
        .count();
    hits as f64 / s.scores.len() as f64
}

/// Mann–Whitney AUC with half credit for ties. Credit is counted in integer
/// half-units, so the only rounding is the final division.
pub fn roc_auc(s: &ScoredSet) -> Result<f64> {
    let pos = s.positives() as u128;
    let neg = s.labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    let mut credit: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && s.scores[order[j]] == s.scores[order[i]] {
            if s.labels[order[j]] == 1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        credit += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(credit as f64 / (2 * pos * neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Absent when the split holds a single class.
    pub auc: Option<f64>,
    pub count: usize,
}

/// Images of `shard` carrying `tag`, stacked into one batch.
pub fn split_batch(shard: &ClientShard, tag: SplitTag) -> Result<(Tensor<f32>, Vec<u8>)> {
    let idx = shard.indices(tag);
    if idx.is_empty() {
        return Err(Error::Empty(format!(
            "{} split of client {}",
            tag.name(),
            shard.client_id
        )));
    }
    let images: Vec<&Tensor<f32>> = idx.iter().map(|&i| &shard.images[i]).collect();
    Ok((
        Tensor::stack(&images)?,
        idx.iter().map(|&i| shard.labels[i]).collect(),
    ))
}

/// Score one split with a classifier whose output is `[N, 1]` probabilities.
pub fn evaluate_model(
    model: &Sequential<f32>,
    shard: &ClientShard,
    tag: SplitTag,
) -> Result<Evaluation> {
    let (x, labels) = split_batch(shard, tag)?;
    let probs = model.forward(&x)?;
    let set = ScoredSet::new(probs.data().iter().map(|&p| p as f64).collect(), labels)?;
    let pos = set.positives();
    let auc = if pos == 0 || pos == set.labels().len() {
        None
    } else {
        Some(roc_auc(&set)?)
    };
    Ok(Evaluation {
        accuracy: accuracy(&set, THRESHOLD),
        auc,
        count: set.labels().len(),
    })
}
