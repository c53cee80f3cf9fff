use thiserror::Error;

use crate::density::DensityError;
use crate::divergence::DivergenceError;
use crate::evaluation::EvalError;
use crate::feature_pack::PackError;
use crate::geometry::GeometryError;
use crate::sampling::SamplingError;
use crate::synthetic::SyntheticError;

pub type Result<T, E = RadarError> = std::result::Result<T, E>;

/// Top-level error for the engine.
#[derive(Debug, Error)]
pub enum RadarError {
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    Request(String),
}

impl RadarError {
    /// Whether the failure comes from user input (pack, config, arguments)
    /// rather than an internal numerical breakdown.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            RadarError::Density(DensityError::NonFinite) | RadarError::Density(DensityError::NotPositiveDefinite { .. })
        )
    }
}
