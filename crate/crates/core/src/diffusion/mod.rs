//! Pixel-space denoising diffusion with a conditioned miniature U-net.

pub mod checkpoint;
pub mod config;
pub mod image_io;
pub mod model;
pub mod sample;
pub mod schedule;
pub mod train;
pub mod unet;

pub use config::{LevelConfig, UNetConfig};
pub use model::{guide, ToyModel};
pub use sample::{ddim_sample, ddim_sample_observed, ddim_sample_single, SamplerConfig};
pub use schedule::NoiseSchedule;
pub use train::{denoising_loss, pretrain, PretrainConfig, TrainExample};
pub use unet::{LayerContext, UNetOutput};
