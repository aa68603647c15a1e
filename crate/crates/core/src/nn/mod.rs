//! Minimal reverse-mode neural network toolkit for the denoiser.

pub mod checkpoint;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod unet;

pub use checkpoint::Checkpoint;
pub use optim::{ema_update, Adam};
pub use tensor::{ParamStore, Real, Tensor};
pub use unet::{Denoiser, ForwardCache, UNetConfig};
