pub mod cli;
pub mod cmaes;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod nn;
pub mod scattering;

pub use error::{Error, Result};
