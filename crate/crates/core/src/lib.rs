//! Deterministic federated-learning simulator for two-class ultrasound-like
//! images, with DCGAN and class-conditioned DDPM synthetic augmentation.
//!
//! Module map:
//!
//! * [`nn`]: tensors, layers with explicit backward passes, losses, AdamW.
//! * [`busgen`]: procedural lesion images, client shards, 3:1:2 splits.
//! * [`gan`]: class-specific DCGAN pairs.
//! * [`diffusion`]: noise schedule, conditional denoiser, guided sampling.
//! * [`fedsim`]: FedAvg / FedProx rounds with synthetic updates.
//! * [`metrics`]: accuracy, exact ROC AUC, ablation sweeps.
//! * [`format`]: the binary shard and checkpoint containers.

pub mod busgen;
pub mod diffusion;
pub mod error;
pub mod fedsim;
pub mod format;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, FormatError, Result};
