//! Engine configuration and its digest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::CovarianceKind;
use crate::divergence::DivergenceAlgo;
use crate::error::{RadarError, Result};
use crate::geometry::SpaceKind;
use crate::sampling::SamplingStrategy;

pub const DEFAULT_PAIRS: usize = 32_768;
pub const DEFAULT_WINDOW: usize = 6;
pub const DEFAULT_BASELINE_PAIRS: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarConfig {
    pub use_distance: bool,
    pub use_angle: bool,
    pub standardize: bool,
    pub strategy: SamplingStrategy,
    pub space: SpaceKind,
    pub covariance: CovarianceKind,
    pub algorithm: DivergenceAlgo,
    /// Pairs drawn per descriptor batch.
    pub n_pairs: usize,
    /// Window radius in layer transitions.
    pub ell: usize,
    /// Uniform pairs used to fit the standardizer.
    pub baseline_pairs: usize,
    pub seed: u64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self {
            use_distance: true,
            use_angle: true,
            standardize: true,
            strategy: SamplingStrategy::default(),
            space: SpaceKind::Euclidean,
            covariance: CovarianceKind::Diag,
            algorithm: DivergenceAlgo::default(),
            n_pairs: DEFAULT_PAIRS,
            ell: DEFAULT_WINDOW,
            baseline_pairs: DEFAULT_BASELINE_PAIRS,
            seed: 0,
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RadarError::Config(m.to_string()));
        if !self.use_distance && !self.use_angle {
            return bad("at least one of use_distance and use_angle must be enabled");
        }
        if self.space == SpaceKind::PseudoCartesian && !(self.use_distance && self.use_angle) {
            return bad("the cartesian space needs both angle and distance features");
        }
        if self.n_pairs == 0 {
            return bad("n_pairs must be at least 1");
        }
        if self.ell == 0 {
            return bad("ell must be at least 1");
        }
        if self.standardize && self.baseline_pairs == 0 {
            return bad("baseline_pairs must be at least 1 when standardizing");
        }
        if !(self.strategy.tau > 0.0 && self.strategy.tau.is_finite()) {
            return bad("tau must be positive");
        }
        self.algorithm.validate().map_err(|e| RadarError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| RadarError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// JSON with keys in sorted order at every level.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical_json().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}
