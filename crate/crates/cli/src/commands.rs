use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fedsynth::busgen::{
    build_federation, scaled_count, Class, ClientShard, DatasetManifest, SplitTag, CLIENT_COUNT,
};
use fedsynth::diffusion::{ddpm_sample, train_ddpm};
use fedsynth::fedsim::{
    classifier_fingerprint, load_classifier, round_log_rows, run_federation, write_round_log, Best,
    FederationState, SyntheticPool, SyntheticSource, ROUND_LOG_HEADER,
};
use fedsynth::format::{
    load_checkpoint, load_shard, save_checkpoint, save_shard, write_atomic, Checkpoint,
    SHARD_VERSION,
};
use fedsynth::gan::{gan_sample, generator_training_set, loss_history_csv, train_gan};
use fedsynth::metrics::{
    ablation_sweep, evaluate_model, fmt_metric, fmt_opt, write_series, SweepConfig,
};
use fedsynth::nn::Module;
use fedsynth::rng::SeedStream;

use crate::config::Settings;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).map_err(CliError::at(path))
}

fn write_resolved(dir: &Path, s: &Settings) -> Result<()> {
    write_text(&dir.join("resolved.cfg"), &s.raw.resolved_text())
}

pub fn shard_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("client{k}.fsbu"))
}

pub fn pool_path(dir: &Path, source: SyntheticSource) -> PathBuf {
    dir.join(format!("pool_{}.fsbu", source.name()))
}

fn load_shards(dir: &Path) -> Result<Vec<ClientShard>> {
    (0..CLIENT_COUNT)
        .map(|k| {
            let p = shard_path(dir, k);
            load_shard(&p).map_err(CliError::at(&p))
        })
        .collect()
}

fn load_pool(dir: &Path, source: SyntheticSource) -> Result<SyntheticPool> {
    let p = pool_path(dir, source);
    let shard = load_shard(&p).map_err(CliError::at(&p))?;
    SyntheticPool::from_shard(shard, source).map_err(CliError::at(&p))
}

pub fn datagen(s: &Settings) -> Result<()> {
    let shards = build_federation(s.seed, s.scale_fraction)?;
    create_dir(&s.data_dir)?;
    let mut manifest = DatasetManifest::new();
    manifest.set("seed", s.seed);
    manifest.set("scale_fraction", s.scale_fraction);
    manifest.set("format_version", SHARD_VERSION);
    manifest.set("split_ratio", "3:1:2");
    for (k, shard) in shards.iter().enumerate() {
        let p = shard_path(&s.data_dir, k);
        let crc = save_shard(&p, shard).map_err(CliError::at(&p))?;
        manifest.describe_shard(shard, crc);
    }
    write_text(&s.data_dir.join("manifest.txt"), &manifest.to_text())?;
    write_resolved(&s.data_dir, s)?;
    println!("wrote {} shards to {}", shards.len(), s.data_dir.display());
    Ok(())
}

/// Pool images are generated in label order, benign first.
pub fn train_gen(s: &Settings) -> Result<()> {
    let shards = load_shards(&s.data_dir)?;
    let per_class = scaled_count(s.synthetic_per_class, s.scale_fraction);
    let sample_seeds = SeedStream::new(s.seed).child("pool");
    let dir = &s.pool_dir;
    create_dir(dir)?;
    let mut images = Vec::with_capacity(2 * per_class);
    match s.generator {
        SyntheticSource::Dcgan => {
            // one pair per class, or per (client, class) in per-client mode;
            // per-client pools take image i from client i mod K
            let groups: Vec<(String, Vec<ClientShard>)> = if s.gan.per_client {
                shards
                    .iter()
                    .enumerate()
                    .map(|(k, sh)| (format!("client{k}_"), vec![sh.clone()]))
                    .collect()
            } else {
                vec![(String::new(), shards.clone())]
            };
            for class in Class::BOTH {
                let mut pairs = Vec::new();
                for (prefix, group) in &groups {
                    let data = generator_training_set(group, Some(class))?;
                    let (pair, history) = train_gan(class, &data, &s.gan)?;
                    let stem = format!("gan_{prefix}{}", class.name());
                    let ck = Checkpoint {
                        round: s.gan.epochs as u32,
                        params: pair.param_set(),
                        optimizer: None,
                    };
                    let p = dir.join(format!("{stem}.fsck"));
                    save_checkpoint(&p, &ck).map_err(CliError::at(&p))?;
                    write_text(
                        &dir.join(format!("{stem}_loss.csv")),
                        &loss_history_csv(&history),
                    )?;
                    pairs.push(pair);
                }
                let seed = sample_seeds.seed_for(class.name());
                let mut drawn: Vec<_> = pairs
                    .iter()
                    .enumerate()
                    .map(|(g, pair)| {
                        let n = (per_class + pairs.len() - 1 - g) / pairs.len();
                        gan_sample(pair, n, seed ^ g as u64).map(|v| v.into_iter())
                    })
                    .collect::<std::result::Result<_, _>>()?;
                for i in 0..per_class {
                    images.push(drawn[i % pairs.len()].next().expect("sized per group"));
                }
            }
        }
        SyntheticSource::Ddpm => {
            let data = generator_training_set(&shards, None)?;
            let (model, losses) = train_ddpm(&data, &s.ddpm)?;
            let ck = Checkpoint {
                round: s.ddpm.steps as u32,
                params: model.param_set(),
                optimizer: None,
            };
            let p = dir.join("ddpm.fsck");
            save_checkpoint(&p, &ck).map_err(CliError::at(&p))?;
            let mut csv = String::from("step,loss\n");
            for (i, l) in losses.iter().enumerate() {
                let _ = writeln!(csv, "{},{}", i + 1, fmt_metric(*l as f64));
            }
            write_text(&dir.join("ddpm_loss.csv"), &csv)?;
            let schedule = s.ddpm.schedule()?;
            for class in Class::BOTH {
                let seed = sample_seeds.seed_for(class.name());
                images.extend(ddpm_sample(
                    &model,
                    &schedule,
                    per_class,
                    class.label(),
                    &s.ddpm.guidance,
                    seed,
                )?);
            }
        }
    }
    let (imgs, labels): (Vec<_>, Vec<_>) = images.into_iter().unzip();
    let pool = SyntheticPool::new(imgs, labels, s.generator)?;
    let p = pool_path(dir, s.generator);
    let crc = save_shard(&p, &pool.to_shard(u16::MAX)?).map_err(CliError::at(&p))?;
    let mut manifest = DatasetManifest::new();
    manifest.set("source", s.generator.name());
    manifest.set("seed", s.seed);
    manifest.set("benign", per_class);
    manifest.set("malignant", per_class);
    manifest.set("crc32", format!("{crc:08x}"));
    write_text(
        &dir.join(format!("pool_{}.manifest", s.generator.name())),
        &manifest.to_text(),
    )?;
    write_resolved(dir, s)?;
    println!("wrote {} ({} images)", p.display(), pool.len());
    Ok(())
}

const STATE_CK: &str = "state.fsck";
const STATE_TXT: &str = "state.txt";
const BEST_CK: &str = "best.fsck";
const ROUND_LOG: &str = "round_log.csv";

fn auc_bits(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |a| format!("{:016x}", a.to_bits()))
}

fn parse_auc_bits(s: &str) -> Option<Option<f64>> {
    match s {
        "NA" => Some(None),
        _ => u64::from_str_radix(s, 16)
            .ok()
            .map(|b| Some(f64::from_bits(b))),
    }
}

/// State of an interrupted run in `dir`, plus the round log rows it wrote.
fn load_state(dir: &Path) -> Result<(FederationState, String)> {
    let fp = classifier_fingerprint();
    let sp = dir.join(STATE_CK);
    let state = load_checkpoint(&sp, Some(&fp)).map_err(CliError::at(&sp))?;
    let bp = dir.join(BEST_CK);
    let best = load_checkpoint(&bp, Some(&fp)).map_err(CliError::at(&bp))?;
    let tp = dir.join(STATE_TXT);
    let meta = DatasetManifest::parse(
        &fs::read_to_string(&tp).map_err(|e| CliError::usage(format!("{}: {e}", tp.display())))?,
    )?;
    let bad = || CliError::usage(format!("{}: malformed run state", tp.display()));
    let round: usize = meta
        .get("round")
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad)?;
    let best_auc = meta
        .get("best_avg_val_auc")
        .and_then(parse_auc_bits)
        .ok_or_else(bad)?;
    if round != state.round as usize || best.round as usize > round || round == 0 {
        return Err(bad());
    }
    let lp = dir.join(ROUND_LOG);
    let log =
        fs::read_to_string(&lp).map_err(|e| CliError::usage(format!("{}: {e}", lp.display())))?;
    let rows: String = log
        .lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|r| r.parse::<usize>().ok())
                .is_some_and(|r| r <= round)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    Ok((
        FederationState {
            round,
            global: state.params,
            best: Some(Best {
                round: best.round as usize,
                avg_val_auc: best_auc,
                params: best.params,
            }),
            records: Vec::new(),
        },
        rows,
    ))
}

pub fn fed_train(s: &Settings) -> Result<()> {
    let shards = load_shards(&s.data_dir)?;
    let pool = s
        .synthetic_source
        .map(|src| load_pool(&s.pool_dir, src))
        .transpose()?;
    let dir = &s.out_dir;
    let (state, prior_rows) = if s.resume {
        let (st, rows) = load_state(dir)?;
        (Some(st), rows)
    } else {
        (None, String::new())
    };
    create_dir(dir)?;
    let result = run_federation(
        &s.federation,
        &shards,
        pool.as_ref(),
        state,
        s.stop_after_round,
        |st| {
            let log = format!(
                "{ROUND_LOG_HEADER}\n{prior_rows}{}",
                round_log_rows(&st.records)
            );
            write_atomic(&dir.join(ROUND_LOG), log.as_bytes())?;
            let best = st.best.as_ref().expect("a round has run");
            save_checkpoint(
                &dir.join(BEST_CK),
                &Checkpoint {
                    round: best.round as u32,
                    params: best.params.clone(),
                    optimizer: None,
                },
            )?;
            save_checkpoint(
                &dir.join(STATE_CK),
                &Checkpoint {
                    round: st.round as u32,
                    params: st.global.clone(),
                    optimizer: None,
                },
            )?;
            let meta = format!(
                "round={}\nbest_round={}\nbest_avg_val_auc={}\n",
                st.round,
                best.round,
                auc_bits(best.avg_val_auc)
            );
            write_atomic(&dir.join(STATE_TXT), meta.as_bytes())
        },
    )?;
    write_resolved(dir, s)?;
    let st = &result.state;
    match &st.best {
        Some(b) => println!(
            "round {}/{}; best round {} with average val AUC {}",
            st.round,
            s.federation.rounds,
            b.round,
            fmt_opt(b.avg_val_auc)
        ),
        None => println!("no rounds left to run"),
    }
    Ok(())
}

/// `client,acc,auc` rows on the test splits plus an unweighted average row.
pub fn eval(s: &Settings) -> Result<()> {
    let shards = load_shards(&s.data_dir)?;
    let path = s
        .checkpoint
        .clone()
        .unwrap_or_else(|| s.out_dir.join(BEST_CK));
    let ck =
        load_checkpoint(&path, Some(&classifier_fingerprint())).map_err(CliError::at(&path))?;
    let model = load_classifier(&ck.params)?;
    let evals = shards
        .iter()
        .map(|sh| {
            if sh.count(SplitTag::Test) == 0 {
                return Err(CliError::usage(format!(
                    "client {} has no test split",
                    sh.client_id
                )));
            }
            Ok(evaluate_model(&model, sh, SplitTag::Test)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("client,acc,auc\n");
    for (sh, e) in shards.iter().zip(&evals) {
        let _ = writeln!(
            csv,
            "{},{},{}",
            sh.client_id,
            fmt_metric(e.accuracy),
            fmt_opt(e.auc)
        );
    }
    let acc = evals.iter().map(|e| e.accuracy).sum::<f64>() / evals.len() as f64;
    let aucs: Vec<f64> = evals.iter().filter_map(|e| e.auc).collect();
    let auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    let _ = writeln!(csv, "average,{},{}", fmt_metric(acc), fmt_opt(auc));
    create_dir(&s.out_dir)?;
    write_text(&s.out_dir.join("eval.csv"), &csv)?;
    write_resolved(&s.out_dir, s)?;
    print!("{csv}");
    Ok(())
}

pub fn ablate(s: &Settings) -> Result<()> {
    let shards = load_shards(&s.data_dir)?;
    let pools = s
        .sweep_sources
        .iter()
        .map(|&src| load_pool(&s.pool_dir, src))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&SyntheticPool> = pools.iter().collect();
    let config = SweepConfig {
        base: s.federation.clone(),
        counts: s.sweep_counts.clone(),
        seeds: s.sweep_seeds.clone(),
    };
    let logs = s.out_dir.join("logs");
    create_dir(&logs)?;
    let result = ablation_sweep(&config, &shards, &refs, |cell| {
        let name = format!("{}_{}_{}.csv", cell.source.name(), cell.count, cell.seed);
        write_atomic(&logs.join(name), write_round_log(&cell.records).as_bytes())
    })?;
    write_series(&s.out_dir, &result)?;
    write_resolved(&s.out_dir, s)?;
    for src in &s.sweep_sources {
        for &c in &s.sweep_counts {
            println!(
                "{} count {c}: median mean test AUC {}",
                src.name(),
                fmt_opt(result.median_auc(*src, c))
            );
        }
    }
    Ok(())
}
