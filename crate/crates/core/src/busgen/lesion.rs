use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IMAGE_SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Benign = 0,
    Malignant = 1,
}

impl Class {
    pub const BOTH: [Class; 2] = [Class::Benign, Class::Malignant];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Result<Self> {
        match label {
            0 => Ok(Class::Benign),
            1 => Ok(Class::Malignant),
            other => Err(Error::InvalidLabel(other as f64)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Benign => "benign",
            Class::Malignant => "malignant",
        }
    }
}

/// Geometry and echogenicity of one synthetic lesion. Coordinates and radii
/// are fractions of the image side.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionSpec {
    pub class: Class,
    /// (row, col) in `[0.2, 0.8]²`
    pub center: (f64, f64),
    /// semi-axes in `[0.12, 0.30]`
    pub radii: (f64, f64),
    /// rotation of the first semi-axis, radians
    pub orientation: f64,
    /// relative boundary amplitude in `[0, 0.5]`
    pub irregularity: f64,
    pub spicule_count: u32,
    pub spicule_phase: f64,
    /// lesion/background contrast in `[0.2, 0.6]`
    pub echo_intensity: f64,
    pub background: f64,
    /// standard deviation of the multiplicative speckle
    pub speckle: f64,
}

impl LesionSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("lesion spec: {what}")));
        let (r, c) = self.center;
        if !(0.2..=0.8).contains(&r) || !(0.2..=0.8).contains(&c) {
            return bad("center outside [0.2, 0.8]²");
        }
        let (a, b) = self.radii;
        if !(0.12..=0.30).contains(&a) || !(0.12..=0.30).contains(&b) {
            return bad("radii outside [0.12, 0.30]");
        }
        if !(0.2..=0.6).contains(&self.echo_intensity) {
            return bad("echo intensity outside [0.2, 0.6]");
        }
        if !(0.0..=0.5).contains(&self.irregularity) {
            return bad("irregularity outside [0, 0.5]");
        }
        if !(self.echo_intensity..=1.0).contains(&self.background) || self.speckle < 0.0 {
            return bad("background/speckle out of range");
        }
        match self.class {
            Class::Benign if self.irregularity != 0.0 || self.spicule_count != 0 => {
                bad("benign lesions have a smooth boundary")
            }
            Class::Malignant if self.irregularity < 0.25 || self.spicule_count < 4 => {
                bad("malignant lesions need irregularity >= 0.25 and >= 4 spicules")
            }
            _ => Ok(()),
        }
    }

    /// Radius of the underlying ellipse along local angle `theta`.
    pub fn ellipse_radius(&self, theta: f64) -> f64 {
        let (a, b) = self.radii;
        a * b / ((b * theta.cos()).powi(2) + (a * theta.sin()).powi(2)).sqrt()
    }

    /// Boundary radius along local angle `theta`: the ellipse modulated by a
    /// zero-mean spiculation profile.
    pub fn boundary_radius(&self, theta: f64) -> f64 {
        let base = self.ellipse_radius(theta);
        if self.spicule_count == 0 {
            return base;
        }
        let k = self.spicule_count as f64;
        let s = (0.5 + 0.5 * (k * (theta - self.spicule_phase)).cos()).powi(3);
        // E[s] = 5/16 over a full turn, so 2.4·s − 0.75 averages to zero.
        base * (1.0 + self.irregularity * (2.4 * s - 0.75))
    }

    /// Whether the point (row, col), in side fractions, lies in the lesion.
    pub fn contains(&self, row: f64, col: f64) -> bool {
        let (dy, dx) = (row - self.center.0, col - self.center.1);
        let (sin, cos) = self.orientation.sin_cos();
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        let rho = (u * u + v * v).sqrt();
        rho <= self.boundary_radius(v.atan2(u))
    }

    fn background_at(&self, row: f64) -> f64 {
        // brighter near the transducer, attenuating with depth
        self.background + 0.06 * (0.5 - row)
    }

    /// Noise-free rendering at an arbitrary resolution, `samples²`
    /// sub-pixel samples per pixel for the lesion coverage.
    pub fn render_clean(&self, side: usize, samples: usize) -> Vec<f64> {
        let s = samples.max(1);
        let mut out = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let mut hits = 0usize;
                for sy in 0..s {
                    for sx in 0..s {
                        let r = (y as f64 + (sy as f64 + 0.5) / s as f64) / side as f64;
                        let c = (x as f64 + (sx as f64 + 0.5) / s as f64) / side as f64;
                        if self.contains(r, c) {
                            hits += 1;
                        }
                    }
                }
                let coverage = hits as f64 / (s * s) as f64;
                let row = (y as f64 + 0.5) / side as f64;
                out.push(self.background_at(row) - self.echo_intensity * coverage);
            }
        }
        out
    }
}

/// Render a 32×32 image in `[0, 1]`: anti-aliased lesion, multiplicative
/// speckle, clipping.
pub fn generate_image(spec: &LesionSpec, noise_seed: u64) -> Tensor<f32> {
    let clean = spec.render_clean(IMAGE_SIDE, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let data = clean
        .into_iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (v * (1.0 + spec.speckle * z)).clamp(0.0, 1.0) as f32
        })
        .collect();
    Tensor::new(vec![1, IMAGE_SIDE, IMAGE_SIDE], data).expect("image shape")
}

pub fn full_turn(i: usize, n: usize) -> f64 {
    2.0 * PI * i as f64 / n as f64
}
