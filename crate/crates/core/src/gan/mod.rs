//! Class-specific DCGAN pairs trained on pooled train+val images.

pub mod model;
pub mod train;

pub use model::{discriminator, generator, GanPair, LATENT_DIM};
pub use train::{
    d_loss_and_grads, d_step, g_loss_and_grads, g_step, gan_sample, generator_training_set,
    loss_history_csv, train_gan, EpochLoss, GanTrainConfig,
};
