//! Class-conditioned DDPM: forward noising, ε-prediction training with label
//! dropout, and guided ancestral sampling.

pub mod ddpm;
pub mod denoiser;
pub mod schedule;

pub use ddpm::{
    ddpm_chain, ddpm_loss_and_grads, ddpm_sample, ddpm_train_step, draw_conditioning, guided_eps,
    guided_prediction, noised_batch, reverse_step, reverse_step_with, train_ddpm, Conditioning,
    DdpmTrainConfig, GuidanceConfig, StepStats,
};
pub use denoiser::{step_features, Denoiser, EpsModel, MlpDenoiser, NULL_CLASS};
pub use schedule::{make_schedule, q_sample, q_sample_with, NoiseSchedule};
