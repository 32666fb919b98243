use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{evaluate_model, fmt_metric, fmt_opt, Evaluation};
use crate::busgen::{ClientShard, SplitTag};
use crate::error::{Error, Result};
use crate::fedsim::{
    load_classifier, run_federation, FederationConfig, RoundRecord, SyntheticPool, SyntheticSource,
};
use crate::format::write_atomic;

pub const SWEEP_HEADER: &str =
    "source,count,seed,test_acc_busbra_like,test_acc_client2,test_acc_client3,mean_acc,mean_auc";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Everything but `synthetic_count` and `seed` is taken from here.
    pub base: FederationConfig,
    /// Synthetic images per round; strictly increasing, starting at 0.
    pub counts: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.counts.first() != Some(&0) {
            return Err(Error::InvalidArgument(
                "sweep counts must start with 0".into(),
            ));
        }
        if self.counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "sweep counts must be strictly increasing".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "sweep needs at least one seed".into(),
            ));
        }
        self.base.validate()
    }
}

/// Synthetic images per round that make up `share` of a round's images
/// next to `real` real training images.
pub fn count_for_share(real: usize, share: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&share) {
        return Err(Error::InvalidArgument(format!(
            "synthetic share {share} outside [0, 1)"
        )));
    }
    Ok((share * real as f64 / (1.0 - share)).round() as usize)
}

/// One finished federation of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub source: SyntheticSource,
    pub count: usize,
    pub seed: u64,
    /// Best-round model on each client's test split.
    pub test: Vec<Evaluation>,
    pub best_round: usize,
    pub records: Vec<RoundRecord>,
}

impl SweepCell {
    pub fn mean_acc(&self) -> f64 {
        self.test.iter().map(|e| e.accuracy).sum::<f64>() / self.test.len() as f64
    }

    /// Unweighted mean over clients whose test split has both classes.
    pub fn mean_auc(&self) -> Option<f64> {
        mean(self.test.iter().filter_map(|e| e.auc))
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// A CSV row: one cell, or the mean over seeds when `seed` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub source: SyntheticSource,
    pub count: usize,
    pub seed: Option<u64>,
    pub test_acc: Vec<f64>,
    pub mean_acc: f64,
    pub mean_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    fn group(&self, source: SyntheticSource, count: usize) -> impl Iterator<Item = &SweepCell> {
        self.cells
            .iter()
            .filter(move |c| c.source == source && c.count == count)
    }

    fn keys(&self) -> Vec<(SyntheticSource, usize)> {
        let mut keys: Vec<_> = Vec::new();
        for c in &self.cells {
            if !keys.contains(&(c.source, c.count)) {
                keys.push((c.source, c.count));
            }
        }
        keys
    }

    pub fn mean_row(&self, source: SyntheticSource, count: usize) -> Option<SweepRow> {
        let cells: Vec<&SweepCell> = self.group(source, count).collect();
        let first = cells.first()?;
        let n = cells.len() as f64;
        let test_acc = (0..first.test.len())
            .map(|k| cells.iter().map(|c| c.test[k].accuracy).sum::<f64>() / n)
            .collect();
        Some(SweepRow {
            source,
            count,
            seed: None,
            test_acc,
            mean_acc: cells.iter().map(|c| c.mean_acc()).sum::<f64>() / n,
            mean_auc: mean(cells.iter().filter_map(|c| c.mean_auc())),
        })
    }

    /// Median over seeds of the per-cell mean test AUC.
    pub fn median_auc(&self, source: SyntheticSource, count: usize) -> Option<f64> {
        let mut v: Vec<f64> = self
            .group(source, count)
            .filter_map(|c| c.mean_auc())
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 {
            v[m]
        } else {
            (v[m - 1] + v[m]) / 2.0
        })
    }

    /// Per-cell rows followed by one mean row per (source, count).
    pub fn rows(&self) -> Vec<SweepRow> {
        let mut rows: Vec<SweepRow> = self
            .cells
            .iter()
            .map(|c| SweepRow {
                source: c.source,
                count: c.count,
                seed: Some(c.seed),
                test_acc: c.test.iter().map(|e| e.accuracy).collect(),
                mean_acc: c.mean_acc(),
                mean_auc: c.mean_auc(),
            })
            .collect();
        rows.extend(
            self.keys()
                .into_iter()
                .filter_map(|(s, n)| self.mean_row(s, n)),
        );
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_HEADER}\n");
        for r in self.rows() {
            let seed = r.seed.map_or("mean".to_string(), |v| v.to_string());
            let accs: Vec<String> = r.test_acc.iter().map(|&a| fmt_metric(a)).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.source.name(),
                r.count,
                seed,
                accs.join(","),
                fmt_metric(r.mean_acc),
                fmt_opt(r.mean_auc)
            );
        }
        s
    }

    /// Two-column `count,<metric>` series of the seed means for one source.
    /// The first line echoes the count axis as a `#` comment.
    pub fn series(&self, source: SyntheticSource, metric: SeriesMetric) -> String {
        let counts: Vec<usize> = self
            .keys()
            .into_iter()
            .filter(|&(s, _)| s == source)
            .map(|(_, c)| c)
            .collect();
        let axis: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
        let mut s = format!("# counts: {}\ncount,{}\n", axis.join(","), metric.column());
        for count in counts {
            let row = self.mean_row(source, count).expect("key has cells");
            let v = match metric {
                SeriesMetric::Accuracy => fmt_metric(row.mean_acc),
                SeriesMetric::Auc => fmt_opt(row.mean_auc),
            };
            let _ = writeln!(s, "{count},{v}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesMetric {
    Accuracy,
    Auc,
}

impl SeriesMetric {
    pub fn column(self) -> &'static str {
        match self {
            SeriesMetric::Accuracy => "mean_acc",
            SeriesMetric::Auc => "mean_auc",
        }
    }
}

/// Run every (source, count, seed) cell. Count 0 does not touch the pool, so
/// its runs are shared between sources. `on_cell` sees each cell as it
/// finishes.
pub fn ablation_sweep(
    config: &SweepConfig,
    shards: &[ClientShard],
    pools: &[&SyntheticPool],
    mut on_cell: impl FnMut(&SweepCell) -> Result<()>,
) -> Result<SweepResult> {
    config.validate()?;
    if pools.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one synthetic source".into(),
        ));
    }
    let mut baseline: BTreeMap<u64, SweepCell> = BTreeMap::new();
    let mut cells = Vec::new();
    for pool in pools {
        for &count in &config.counts {
            for &seed in &config.seeds {
                let cell = match baseline.get(&seed) {
                    Some(b) if count == 0 => SweepCell {
                        source: pool.source,
                        ..b.clone()
                    },
                    _ => {
                        let cell = run_cell(config, shards, pool, count, seed)?;
                        if count == 0 {
                            baseline.insert(seed, cell.clone());
                        }
                        cell
                    }
                };
                on_cell(&cell)?;
                cells.push(cell);
            }
        }
    }
    Ok(SweepResult { cells })
}

fn run_cell(
    config: &SweepConfig,
    shards: &[ClientShard],
    pool: &SyntheticPool,
    count: usize,
    seed: u64,
) -> Result<SweepCell> {
    let fed = FederationConfig {
        synthetic_count: count,
        seed,
        ..config.base.clone()
    };
    let result = run_federation(
        &fed,
        shards,
        (count > 0).then_some(pool),
        None,
        None,
        |_| Ok(()),
    )?;
    let best = result.best();
    let model = load_classifier(&best.params)?;
    let test = shards
        .iter()
        .map(|s| evaluate_model(&model, s, SplitTag::Test))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepCell {
        source: pool.source,
        count,
        seed,
        test,
        best_round: best.round,
        records: result.state.records,
    })
}

/// Write `sweep.csv` and, per source, `series_<source>_acc.csv` and
/// `series_<source>_auc.csv` into `dir`.
pub fn write_series(dir: &Path, result: &SweepResult) -> Result<Vec<PathBuf>> {
    let mut written = vec![dir.join("sweep.csv")];
    write_atomic(&written[0], result.to_csv().as_bytes())?;
    let mut sources: Vec<SyntheticSource> = Vec::new();
    for c in &result.cells {
        if !sources.contains(&c.source) {
            sources.push(c.source);
        }
    }
    for s in sources {
        for (metric, tag) in [(SeriesMetric::Accuracy, "acc"), (SeriesMetric::Auc, "auc")] {
            let path = dir.join(format!("series_{}_{tag}.csv", s.name()));
            write_atomic(&path, result.series(s, metric).as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}
