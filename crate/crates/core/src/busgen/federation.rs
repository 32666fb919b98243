use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SeedStream;

use super::lesion::{generate_image, Class, LesionSpec, IMAGE_SIDE};
use super::shard::{split_shard, ClientShard, SplitTag, MIN_CLASS_COUNT};

pub const CLIENT_COUNT: usize = 3;

/// (benign, malignant) per client at full scale.
pub const TABLE_COUNTS: [(usize, usize); CLIENT_COUNT] = [(1268, 607), (437, 210), (109, 54)];

/// Per-client lesion parameter ranges. The clients differ in brightness,
/// lesion size, contrast and speckle so that their feature distributions
/// are shifted against each other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientProfile {
    pub background: (f64, f64),
    pub radius: (f64, f64),
    pub echo_benign: (f64, f64),
    pub echo_malignant: (f64, f64),
    pub speckle: f64,
}

pub const PROFILES: [ClientProfile; CLIENT_COUNT] = [
    ClientProfile {
        background: (0.62, 0.70),
        radius: (0.14, 0.26),
        echo_benign: (0.25, 0.45),
        echo_malignant: (0.35, 0.55),
        speckle: 0.18,
    },
    ClientProfile {
        background: (0.52, 0.60),
        radius: (0.16, 0.30),
        echo_benign: (0.20, 0.40),
        echo_malignant: (0.30, 0.50),
        speckle: 0.22,
    },
    ClientProfile {
        background: (0.70, 0.78),
        radius: (0.12, 0.22),
        echo_benign: (0.30, 0.50),
        echo_malignant: (0.40, 0.60),
        speckle: 0.14,
    },
];

/// Round half up. The small epsilon keeps products such as `0.1 × 1265`
/// from landing just under the half.
pub fn scaled_count(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 0.5 + 1e-9).floor() as usize
}

pub fn client_counts(scale_fraction: f64) -> Result<[(usize, usize); CLIENT_COUNT]> {
    if !(scale_fraction > 0.0 && scale_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "scale_fraction {scale_fraction} outside (0, 1]"
        )));
    }
    let mut out = [(0, 0); CLIENT_COUNT];
    for (k, &(b, m)) in TABLE_COUNTS.iter().enumerate() {
        let counts = (
            scaled_count(b, scale_fraction),
            scaled_count(m, scale_fraction),
        );
        for (class, n) in [(Class::Benign, counts.0), (Class::Malignant, counts.1)] {
            if n < MIN_CLASS_COUNT {
                return Err(Error::DegenerateClass {
                    client: k,
                    class: class.name(),
                    count: n,
                    min: MIN_CLASS_COUNT,
                });
            }
        }
        out[k] = counts;
    }
    Ok(out)
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..hi)
}

pub fn sample_spec(profile: &ClientProfile, class: Class, rng: &mut impl Rng) -> LesionSpec {
    let a = draw(rng, profile.radius);
    let b = (a * rng.random_range(0.6..1.0)).max(0.12);
    let center = (draw(rng, (0.35, 0.65)), draw(rng, (0.35, 0.65)));
    let orientation = rng.random_range(0.0..PI);
    let background = draw(rng, profile.background);
    let (echo_range, irregularity, spicule_count, spicule_phase) = match class {
        Class::Benign => (profile.echo_benign, 0.0, 0, 0.0),
        Class::Malignant => (
            profile.echo_malignant,
            rng.random_range(0.25..0.5),
            rng.random_range(4..=9),
            rng.random_range(0.0..2.0 * PI),
        ),
    };
    LesionSpec {
        class,
        center,
        radii: (a, b),
        orientation,
        irregularity,
        spicule_count,
        spicule_phase,
        echo_intensity: draw(rng, echo_range),
        background,
        speckle: profile.speckle,
    }
}

/// Unsplit shard with `benign` + `malignant` images in shuffled order.
pub fn generate_shard(
    client_id: u16,
    (benign, malignant): (usize, usize),
    profile: &ClientProfile,
    stream: &SeedStream,
) -> Result<ClientShard> {
    let mut classes: Vec<Class> = std::iter::repeat_n(Class::Benign, benign)
        .chain(std::iter::repeat_n(Class::Malignant, malignant))
        .collect();
    classes.shuffle(&mut stream.rng("labels"));
    let mut spec_rng = stream.rng("specs");
    let specs: Vec<LesionSpec> = classes
        .iter()
        .map(|&c| sample_spec(profile, c, &mut spec_rng))
        .collect();
    let noise = stream.child("noise");
    let images = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| generate_image(spec, noise.seed_for(&i.to_string())))
        .collect();
    let n = classes.len();
    ClientShard::new(
        client_id,
        IMAGE_SIDE,
        images,
        classes.iter().map(|c| c.label()).collect(),
        vec![SplitTag::Unsplit; n],
    )
}

/// Three split client shards with class counts scaled from the full-size
/// table.
pub fn build_federation(seed: u64, scale_fraction: f64) -> Result<Vec<ClientShard>> {
    let counts = client_counts(scale_fraction)?;
    let root = SeedStream::new(seed).child("busgen");
    (0..CLIENT_COUNT)
        .map(|k| {
            let stream = root.child(&format!("client{k}"));
            split_shard(generate_shard(k as u16, counts[k], &PROFILES[k], &stream)?)
        })
        .collect()
}

/// Flat `key=value` description of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Describe one shard: class counts, split sizes and the CRC of its
    /// encoded bytes.
    pub fn describe_shard(&mut self, shard: &ClientShard, crc: u32) {
        let p = format!("client{}", shard.client_id);
        self.set(&format!("{p}.benign"), shard.class_count(Class::Benign));
        self.set(
            &format!("{p}.malignant"),
            shard.class_count(Class::Malignant),
        );
        for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
            let n = shard.count(tag);
            if n > 0 {
                self.set(&format!("{p}.{}", tag.name()), n);
            }
        }
        self.set(&format!("{p}.crc32"), format!("{crc:08x}"));
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("manifest line {}: missing '='", i + 1))
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self::new()
    }
}
