//! Generator, critics, objectives and the training loop.

pub mod config;
pub mod critic;
pub mod generator;
pub mod inputs;
pub mod loss;
pub mod train;

pub use config::{GlobalRanges, Mode, TrainConfig};
pub use critic::{
    discriminate_motion, discriminate_single, single_frame_discriminator, FusionCritic,
    MultiStreamMotionDiscriminator, SingleFrameDiscriminator,
};
pub use generator::{sample_latent, DhGenerator, GeneratedFrame, GeneratedSample, GraphOutput};
pub use inputs::InputLayout;
pub use loss::{
    critic_loss, gamma_schedule, generator_loss, record_generator_loss, CriticBatch, CriticLoss,
    LossTerms,
};
pub use train::{EpochMetrics, RealData, TrainState};
