//! Conditional DDPM: cosine schedule, training loop and ancestral sampler.

pub mod sample;
pub mod schedule;
pub mod train;

pub use sample::sample;
pub use schedule::{DataDomain, NoiseSchedule};
pub use train::{
    list_checkpoints, steps_per_epoch, train, ArchSpec, CheckpointMeta, TrainOptions, TrainSettings, TrainSummary,
    TrainedModel,
};
