//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fedsynth::diffusion::{DdpmTrainConfig, GuidanceConfig};
use fedsynth::fedsim::{Algorithm, FederationConfig, Injection, SyntheticSource};
use fedsynth::gan::GanTrainConfig;

use crate::error::CliError;

/// Every accepted key with its default, in the order `resolved.cfg` lists them.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("scale_fraction", "0.1"),
    ("data_dir", "data"),
    ("pool_dir", ""),
    ("out_dir", "out"),
    // federation
    ("algorithm", "fedavg"),
    ("mu", "0.03"),
    ("rounds", "100"),
    ("local_epochs", "1"),
    ("batch_size", "32"),
    ("lr_real", "0.001"),
    ("lr_synthetic", "0.0001"),
    ("lr_decay", "0.1"),
    ("lr_decay_period", "30"),
    ("weight_decay", "0.01"),
    ("synthetic_source", "none"),
    ("synthetic_count", "0"),
    ("injection", "server"),
    ("resume", "false"),
    ("stop_after_round", "0"),
    // generators
    ("generator", "ddpm"),
    ("synthetic_per_class", "1000"),
    ("gan_epochs", "200"),
    ("gan_batch_size", "32"),
    ("gan_lr_g", "0.0002"),
    ("gan_lr_d", "0.0002"),
    ("gan_smoothing", "0.1"),
    ("gan_per_client", "false"),
    ("ddpm_steps", "3000"),
    ("ddpm_batch_size", "32"),
    ("ddpm_lr", "0.001"),
    ("ddpm_base_channels", "16"),
    ("timesteps", "200"),
    ("beta_start", "0.0005"),
    ("beta_end", "0.1"),
    ("p_drop", "0.1"),
    ("w_g", "1.5"),
    // eval
    ("checkpoint", ""),
    // ablate
    ("sweep_sources", "ddpm"),
    ("sweep_counts", "0,18,200"),
    ("sweep_seeds", "0,1,2,3,4"),
];

/// Raw values after file and command-line merging.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl RawConfig {
    pub fn defaults() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Apply a config file's `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("{origin}:{}: expected key=value", i + 1))
            })?;
            self.set(k.trim(), v.trim(), &format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    /// Apply `--key value` pairs, which win over the file.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| CliError::usage(format!("expected --key, found {flag:?}")))?;
            let value = it
                .next()
                .ok_or_else(|| CliError::usage(format!("--{key} needs a value")))?;
            self.set(&key.replace('-', "_"), value, "command line")?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), CliError> {
        if !known(key) {
            return Err(CliError::usage(format!(
                "{origin}: unknown config key {key:?}"
            )));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        debug_assert!(known(key), "{key}");
        &self.values[key]
    }

    /// All keys in table order, as written to `resolved.cfg`.
    pub fn resolved_text(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k}={}\n", self.values[*k]))
            .collect()
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| CliError::usage(format!("{key}: cannot parse {v:?}")))
    }

    fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(CliError::usage(format!(
                "{key}: expected true or false, got {v:?}"
            ))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::usage(format!("{key}: cannot parse {s:?}")))
            })
            .collect()
    }

    fn source(&self, key: &str, v: &str) -> Result<SyntheticSource, CliError> {
        SyntheticSource::parse(v).map_err(|e| CliError::usage(format!("{key}: {e}")))
    }
}

/// Typed settings. Built before any command touches the filesystem, so a bad
/// value never leaves partial output behind.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub raw: RawConfig,
    pub seed: u64,
    pub scale_fraction: f64,
    pub data_dir: PathBuf,
    pub pool_dir: PathBuf,
    pub out_dir: PathBuf,
    pub federation: FederationConfig,
    pub synthetic_source: Option<SyntheticSource>,
    pub resume: bool,
    pub stop_after_round: Option<usize>,
    pub generator: SyntheticSource,
    pub synthetic_per_class: usize,
    pub gan: GanTrainConfig,
    pub ddpm: DdpmTrainConfig,
    pub checkpoint: Option<PathBuf>,
    pub sweep_sources: Vec<SyntheticSource>,
    pub sweep_counts: Vec<usize>,
    pub sweep_seeds: Vec<u64>,
}

fn invalid(e: fedsynth::Error) -> CliError {
    CliError::usage(e.to_string())
}

impl Settings {
    pub fn load(config: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(config)
            .map_err(|e| CliError::usage(format!("{}: {e}", config.display())))?;
        let mut raw = RawConfig::defaults();
        raw.apply_text(&text, &config.display().to_string())?;
        raw.apply_overrides(overrides)?;
        Self::from_raw(raw)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        let seed: u64 = raw.parse("seed")?;
        let algorithm = Algorithm::parse(raw.get("algorithm")).map_err(invalid)?;
        let injection = Injection::parse(raw.get("injection")).map_err(invalid)?;
        let federation = FederationConfig {
            algorithm,
            mu: raw.parse("mu")?,
            rounds: raw.parse("rounds")?,
            local_epochs: raw.parse("local_epochs")?,
            batch_size: raw.parse("batch_size")?,
            lr_real: raw.parse("lr_real")?,
            lr_synthetic: raw.parse("lr_synthetic")?,
            lr_decay: raw.parse("lr_decay")?,
            lr_decay_period: raw.parse("lr_decay_period")?,
            weight_decay: raw.parse("weight_decay")?,
            synthetic_count: raw.parse("synthetic_count")?,
            injection,
            seed,
        };
        federation.validate().map_err(invalid)?;
        let synthetic_source = match raw.get("synthetic_source") {
            "none" => None,
            v => Some(raw.source("synthetic_source", v)?),
        };
        if synthetic_source.is_none() && federation.synthetic_count > 0 {
            return Err(CliError::usage(
                "synthetic_count > 0 needs a synthetic_source",
            ));
        }
        let gan = GanTrainConfig {
            epochs: raw.parse("gan_epochs")?,
            batch_size: raw.parse("gan_batch_size")?,
            lr_g: raw.parse("gan_lr_g")?,
            lr_d: raw.parse("gan_lr_d")?,
            seed,
            smoothing: raw.parse("gan_smoothing")?,
            per_client: raw.bool("gan_per_client")?,
        };
        gan.validate().map_err(invalid)?;
        let ddpm = DdpmTrainConfig {
            timesteps: raw.parse("timesteps")?,
            beta_start: raw.parse("beta_start")?,
            beta_end: raw.parse("beta_end")?,
            base_channels: raw.parse("ddpm_base_channels")?,
            steps: raw.parse("ddpm_steps")?,
            batch_size: raw.parse("ddpm_batch_size")?,
            lr: raw.parse("ddpm_lr")?,
            guidance: GuidanceConfig {
                p_drop: raw.parse("p_drop")?,
                w_g: raw.parse("w_g")?,
            },
            seed,
        };
        ddpm.validate().map_err(invalid)?;
        let sweep_sources = raw
            .get("sweep_sources")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| raw.source("sweep_sources", s))
            .collect::<Result<Vec<_>, _>>()?;
        let sweep_counts: Vec<usize> = raw.list("sweep_counts")?;
        if sweep_counts.first() != Some(&0) || sweep_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::usage(
                "sweep_counts must start at 0 and be strictly increasing",
            ));
        }
        let sweep_seeds: Vec<u64> = raw.list("sweep_seeds")?;
        if sweep_seeds.is_empty() || sweep_sources.is_empty() {
            return Err(CliError::usage(
                "sweep_seeds and sweep_sources must be non-empty",
            ));
        }
        let scale_fraction: f64 = raw.parse("scale_fraction")?;
        if !(scale_fraction > 0.0 && scale_fraction <= 1.0) {
            return Err(CliError::usage(format!(
                "scale_fraction {scale_fraction} outside (0, 1]"
            )));
        }
        let data_dir = PathBuf::from(raw.get("data_dir"));
        let pool_dir = match raw.get("pool_dir") {
            "" => data_dir.clone(),
            p => PathBuf::from(p),
        };
        let stop: usize = raw.parse("stop_after_round")?;
        Ok(Self {
            seed,
            scale_fraction,
            data_dir,
            pool_dir,
            out_dir: PathBuf::from(raw.get("out_dir")),
            federation,
            synthetic_source,
            resume: raw.bool("resume")?,
            stop_after_round: (stop > 0).then_some(stop),
            generator: raw.source("generator", raw.get("generator"))?,
            synthetic_per_class: raw.parse("synthetic_per_class")?,
            gan,
            ddpm,
            checkpoint: match raw.get("checkpoint") {
                "" => None,
                p => Some(PathBuf::from(p)),
            },
            sweep_sources,
            sweep_counts,
            sweep_seeds,
            raw,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let s = Settings::from_raw(RawConfig::defaults()).unwrap();
        assert_eq!(s.federation, FederationConfig::default());
        assert_eq!(s.gan, GanTrainConfig::default());
        assert_eq!(s.ddpm, DdpmTrainConfig::default());
        assert_eq!(s.synthetic_source, None);
        assert_eq!(s.pool_dir, s.data_dir);
    }

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let mut raw = RawConfig::defaults();
        raw.apply_text("rounds = 7 # short\n\n# comment\nseed=3", "f")
            .unwrap();
        raw.apply_overrides(&["--rounds".into(), "9".into()])
            .unwrap();
        assert_eq!(raw.get("rounds"), "9");
        assert_eq!(raw.get("seed"), "3");
        assert!(raw.apply_text("roudns=7", "f").is_err());
        assert!(raw.apply_overrides(&["--nope".into(), "1".into()]).is_err());
        assert!(raw.apply_overrides(&["--rounds".into()]).is_err());
        assert!(raw.apply_text("rounds", "f").is_err());
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut raw = RawConfig::defaults();
        raw.apply_text("mu=0.5\nsweep_counts=0,4", "f").unwrap();
        let mut again = RawConfig::defaults();
        again.apply_text(&raw.resolved_text(), "resolved").unwrap();
        assert_eq!(again, raw);
    }

    #[test]
    fn bad_values_are_rejected() {
        for text in [
            "sweep_counts=0,5,5",
            "sweep_counts=3,5",
            "algorithm=fedsgd",
            "rounds=-1",
            "resume=maybe",
            "synthetic_count=4",
            "p_drop=1.0",
            "scale_fraction=0",
        ] {
            let mut raw = RawConfig::defaults();
            raw.apply_text(text, "f").unwrap();
            assert!(Settings::from_raw(raw).is_err(), "{text}");
        }
    }
}
