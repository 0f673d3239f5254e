//! Adversarial GAN-CLS training with its pretraining switches, and the
//! supervised trainers for the generator baseline, autoencoder and
//! co-attention models.

mod classifier;
mod common;
mod gan;
mod mismatch;

pub use classifier::{
    accuracy, train_attention, train_autoencoder_vqa, AttentionModel, AutoencoderModel, TaskConfig,
};
pub use common::{
    bag_of_words, cross_entropy, image_batch, mse, one_hot, Batcher, LossKind, LossLog, LossRow,
};
pub use gan::{
    discriminator_ranking, evaluate_gan_losses, gan_cls_step, gan_objective_trace, gan_cls_step_with, gan_losses,
    pretrain_discriminator, pretrain_generator, train_gan, GanClsState, GanConfig, GanModel,
    PretrainPlan, UpdateConvention, SATURATION_EPS,
};
pub use mismatch::sample_mismatched;
