use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Precomputed β, α and ᾱ for a T-step forward process. Index `t - 1` holds
/// the value for step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

pub const DEFAULT_TIMESTEPS: usize = 200;
/// The 1000-step range `[1e-4, 0.02]` rescaled by `1000 / T`, so the chain still
/// ends close to pure noise.
pub const DEFAULT_BETA_START: f64 = 5e-4;
pub const DEFAULT_BETA_END: f64 = 0.1;

/// Linear β from `beta_start` to `beta_end` over `steps` steps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "schedule needs at least one step".into(),
        ));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn default_desk() -> Self {
        make_schedule(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("valid defaults")
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_at(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }
}

/// `√ᾱ·x0 + √(1−ᾱ)·ε` for an explicit ᾱ.
pub fn q_sample_with<T: Scalar>(
    alpha_bar: f64,
    x0: &Tensor<T>,
    eps: &Tensor<T>,
) -> Result<Tensor<T>> {
    let a = T::from_f64(alpha_bar.sqrt());
    let s = T::from_f64((1.0 - alpha_bar).sqrt());
    x0.zip_map(eps, |x, e| a * x + s * e)
}

pub fn q_sample<T: Scalar>(
    schedule: &NoiseSchedule,
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
) -> Result<Tensor<T>> {
    schedule.check_step(t)?;
    q_sample_with(schedule.alpha_bar_at(t), x0, eps)
}
