use thiserror::Error;

use crate::geometry::GeometryError;
use crate::scattering::ScatteringError;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("count must be at least 1")]
    EmptyCount,
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions(Vec<f64>),
    #[error("split would leave partition {index} empty ({records} records)")]
    EmptyPartition { index: usize, records: usize },
    #[error("record {id}: {source}")]
    Solver {
        id: u64,
        #[source]
        source: ScatteringError,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record {id}: {message}")]
    InvalidRecord { id: u64, message: String },
    #[error("normalization statistics: {0}")]
    Stats(String),
    #[error("metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule parameters: {0}")]
    Schedule(String),
    #[error("timestep {t} outside 1..={max}")]
    Timestep { t: usize, max: usize },
    #[error("non-finite loss at step {step}: {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("schedule/parameter mismatch: {0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum CmaesError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("expected {expected} candidate/value pairs, got {got}")]
    PopulationSize { expected: usize, got: usize },
    #[error("covariance factorization failed")]
    Factorization,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("target profile has a non-positive value at angle {index}")]
    ZeroTarget { index: usize },
    #[error("profiles have different lengths ({generated} vs {target})")]
    LengthMismatch { generated: usize, target: usize },
    #[error("empty sample list")]
    Empty,
    #[error("target: {0}")]
    Target(String),
}

/// Crate-level error. Every variant's message carries the originating module.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("scattering: {0}")]
    Scattering(#[from] ScatteringError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("neuralnet: {0}")]
    Nn(#[from] NnError),
    #[error("diffusion: {0}")]
    Diffusion(#[from] DiffusionError),
    #[error("cmaes: {0}")]
    Cmaes(#[from] CmaesError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
