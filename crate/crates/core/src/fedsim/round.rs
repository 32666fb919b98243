use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::busgen::{ClientShard, SplitTag};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, fmt_metric, fmt_opt, Evaluation};
use crate::nn::{AdamW, AdamWConfig, Module, ParamSet};
use crate::rng::SeedStream;

use super::aggregate::{aggregate, ClientUpdate};
use super::config::{FederationConfig, Injection};
use super::local::{batch_of, local_update, shuffle_stream, synthetic_update};
use super::model::{classifier, load_classifier, train_step};
use super::pool::SyntheticPool;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub train_loss: Vec<f64>,
    /// `None` for a client without a validation split.
    pub val: Vec<Option<Evaluation>>,
    pub avg_val_auc: Option<f64>,
    /// n_k / n in client order.
    pub weights: Vec<f64>,
    pub synthetic_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Best {
    pub round: usize,
    pub avg_val_auc: Option<f64>,
    pub params: ParamSet<f32>,
}

/// Everything needed to continue a federation: the global model after
/// `round` completed rounds and the best model so far. Randomness is derived
/// from `(seed, round, client)`, so nothing else carries over.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationState {
    pub round: usize,
    pub global: ParamSet<f32>,
    pub best: Option<Best>,
    pub records: Vec<RoundRecord>,
}

impl FederationState {
    pub fn new(seed: u64) -> Self {
        let mut rng = SeedStream::new(seed).rng("classifier-init");
        Self {
            round: 0,
            global: classifier::<f32>(&mut rng).param_set(),
            best: None,
            records: Vec::new(),
        }
    }
}

pub fn average_auc(val: &[Option<Evaluation>]) -> Option<f64> {
    let aucs: Vec<f64> = val.iter().flatten().filter_map(|e| e.auc).collect();
    if aucs.is_empty() {
        None
    } else {
        Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
    }
}

fn evaluate_split(
    params: &ParamSet<f32>,
    shards: &[ClientShard],
    tag: SplitTag,
) -> Result<Vec<Option<Evaluation>>> {
    let model = load_classifier(params)?;
    shards
        .iter()
        .map(|s| {
            if s.count(tag) == 0 {
                Ok(None)
            } else {
                evaluate_model(&model, s, tag).map(Some)
            }
        })
        .collect()
}

/// One communication round from `global` (the model after `round` rounds):
/// server synthetic update, local updates on every client in parallel,
/// aggregation by n_k / n, then validation of the new global model.
pub fn run_round(
    global: &ParamSet<f32>,
    round: usize,
    shards: &[ClientShard],
    pool: Option<&SyntheticPool>,
    config: &FederationConfig,
) -> Result<(ParamSet<f32>, RoundRecord)> {
    if shards.is_empty() {
        return Err(Error::Empty("client list".into()));
    }
    let (start, mut synthetic_steps, client_synth) = match config.injection {
        Injection::Server => {
            let (g, steps) = synthetic_update(global, pool, config, round)?;
            (g, steps, None)
        }
        Injection::Client if config.synthetic_count > 0 => {
            let pool = pool.ok_or_else(|| Error::Empty("synthetic pool".into()))?;
            let idx = pool.draw(config.seed, round, config.synthetic_count)?;
            (global.clone(), 0, Some((pool, idx)))
        }
        Injection::Client => (global.clone(), 0, None),
    };
    let locals: Vec<_> = shards
        .par_iter()
        .map(|s| {
            let synth = client_synth.as_ref().map(|(p, idx)| (*p, idx.as_slice()));
            local_update(&start, s, config, round, synth)
        })
        .collect::<Result<_>>()?;
    if client_synth.is_some() {
        synthetic_steps = config.synthetic_count.div_ceil(config.batch_size);
    }
    let updates: Vec<ClientUpdate> = shards
        .iter()
        .zip(&locals)
        .map(|(s, l)| ClientUpdate {
            client_id: s.client_id,
            params: l.params.clone(),
            weight: s.n_train(),
        })
        .collect();
    let (next, weights) = aggregate(&updates)?;
    let val = evaluate_split(&next, shards, SplitTag::Val)?;
    let record = RoundRecord {
        round: round + 1,
        train_loss: locals.iter().map(|l| l.train_loss).collect(),
        avg_val_auc: average_auc(&val),
        val,
        weights,
        synthetic_steps,
    };
    Ok((next, record))
}

/// Index of the round with the highest average validation AUC; the earliest
/// wins ties, and rounds without any AUC never beat one that has it.
pub fn select_best(aucs: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, Option<f64>)> = None;
    for (i, &a) in aucs.iter().enumerate() {
        let better = match (best, a) {
            (None, _) => true,
            (Some((_, None)), Some(_)) => true,
            (Some((_, Some(b))), Some(v)) => v > b,
            _ => false,
        };
        if better {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationResult {
    pub state: FederationState,
}

impl FederationResult {
    pub fn best(&self) -> &Best {
        self.state.best.as_ref().expect("at least one round ran")
    }
}

/// Run rounds until `config.rounds` are complete or `stop_after` rounds have
/// been reached, continuing from `state` if given.
pub fn run_federation(
    config: &FederationConfig,
    shards: &[ClientShard],
    pool: Option<&SyntheticPool>,
    state: Option<FederationState>,
    stop_after: Option<usize>,
    mut on_round: impl FnMut(&FederationState) -> Result<()>,
) -> Result<FederationResult> {
    config.validate()?;
    let mut state = state.unwrap_or_else(|| FederationState::new(config.seed));
    let end = stop_after.map_or(config.rounds, |s| s.min(config.rounds));
    while state.round < end {
        let (next, record) = run_round(&state.global, state.round, shards, pool, config)?;
        let improves = match &state.best {
            None => true,
            Some(b) => select_best(&[b.avg_val_auc, record.avg_val_auc]) == Some(1),
        };
        if improves {
            state.best = Some(Best {
                round: record.round,
                avg_val_auc: record.avg_val_auc,
                params: next.clone(),
            });
        }
        state.global = next;
        state.round += 1;
        state.records.push(record);
        on_round(&state)?;
    }
    Ok(FederationResult { state })
}

/// Plain minibatch training on one shard's train split, `epochs` times,
/// with the same per-epoch shuffling and optimizer reset as a client.
/// Returns the parameters after every epoch.
pub fn train_centralized(
    init: &ParamSet<f32>,
    shard: &ClientShard,
    config: &FederationConfig,
    epochs: usize,
) -> Result<Vec<ParamSet<f32>>> {
    let train = shard.indices(SplitTag::Train);
    let mut model = load_classifier(init)?;
    let mut out = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let mut opt = AdamW::new(AdamWConfig {
            lr: config.lr_real * config.decay_at(e),
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        });
        let mut order = train.clone();
        order.shuffle(&mut shuffle_stream(config.seed, e, shard.client_id).rng("order"));
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = batch_of(&shard.images, &shard.labels, chunk)?;
            train_step(&mut model, &mut opt, &x, &y, None)?;
        }
        out.push(model.param_set());
    }
    Ok(out)
}

pub const ROUND_LOG_HEADER: &str = "round,client,train_loss,val_acc,val_auc,avg_val_auc";

/// CSV rows for `records`, one per (round, client), without the header.
pub fn round_log_rows(records: &[RoundRecord]) -> String {
    let mut s = String::new();
    for r in records {
        for (k, loss) in r.train_loss.iter().enumerate() {
            let v = r.val[k];
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.round,
                k,
                fmt_metric(*loss),
                fmt_opt(v.map(|e| e.accuracy)),
                fmt_opt(v.and_then(|e| e.auc)),
                fmt_opt(r.avg_val_auc)
            );
        }
    }
    s
}

pub fn write_round_log(records: &[RoundRecord]) -> String {
    format!("{ROUND_LOG_HEADER}\n{}", round_log_rows(records))
}
