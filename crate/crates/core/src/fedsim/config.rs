use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    FedAvg,
    FedProx,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Algorithm::FedAvg),
            "fedprox" => Ok(Algorithm::FedProx),
            _ => Err(Error::InvalidArgument(format!("unknown algorithm {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
        }
    }
}

/// Where the synthetic batches are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injection {
    /// Once per round on the global model, before distribution.
    Server,
    /// Prepended to every client's local epoch.
    Client,
}

impl Injection {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "server" => Ok(Injection::Server),
            "client" => Ok(Injection::Client),
            _ => Err(Error::InvalidArgument(format!(
                "unknown synthetic injection {s:?}"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Injection::Server => "server",
            Injection::Client => "client",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    pub mu: f64,
    pub rounds: usize,
    /// Zero disables local training (used to isolate aggregation).
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr_real: f32,
    pub lr_synthetic: f32,
    pub lr_decay: f32,
    pub lr_decay_period: usize,
    pub weight_decay: f32,
    pub synthetic_count: usize,
    pub injection: Injection,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::FedAvg,
            mu: 0.03,
            rounds: 100,
            local_epochs: 1,
            batch_size: 32,
            lr_real: 1e-3,
            lr_synthetic: 1e-4,
            lr_decay: 0.1,
            lr_decay_period: 30,
            weight_decay: 0.01,
            synthetic_count: 0,
            injection: Injection::Server,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.mu >= 0.0) {
            return bad("mu must be >= 0");
        }
        if !(self.lr_real > 0.0 && self.lr_synthetic > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.lr_decay > 0.0) || self.lr_decay_period == 0 {
            return bad("learning-rate decay factor and period must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.rounds == 0 {
            return bad("rounds must be positive");
        }
        Ok(())
    }

    /// Learning-rate multiplier for 0-based `round`.
    pub fn decay_at(&self, round: usize) -> f32 {
        (self.lr_decay as f64).powi((round / self.lr_decay_period) as i32) as f32
    }

    /// The proximal coefficient actually applied.
    pub fn effective_mu(&self) -> Option<f64> {
        match self.algorithm {
            Algorithm::FedAvg => None,
            Algorithm::FedProx => Some(self.mu),
        }
    }
}
