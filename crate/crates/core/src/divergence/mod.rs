//! Divergences between the within-domain and cross-domain descriptor
//! distributions.

mod kl;
mod mmd;
mod sinkhorn;
mod swd;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::DensityError;

pub use kl::{kl_mc, kl_mc_eval, sym_weighted_kl, sym_weighted_kl_eval, KlEstimate};
pub use mmd::{median_heuristic, mmd_gaussian, mmd_gaussian_biased, MmdEstimate, MEDIAN_SUBSAMPLE};
pub use sinkhorn::{sinkhorn_divergence, sinkhorn_ot, OtValue, SinkhornOptions, SinkhornResult, MAX_COST_ENTRIES};
pub use swd::swd;

pub const DEFAULT_MC_SAMPLES: usize = 100_000;
pub const DEFAULT_GMM_SAMPLES: usize = 20_000;
pub const DEFAULT_PROJECTIONS: usize = 128;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_SINKHORN_ITER: usize = 1000;
pub const DEFAULT_SINKHORN_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DivergenceError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {need} samples per side, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cost matrix of {rows}x{cols} exceeds {limit} entries")]
    TooLarge { rows: usize, cols: usize, limit: usize },
    #[error(transparent)]
    Density(#[from] DensityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// Median pairwise distance over the pooled samples.
    #[default]
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DivergenceAlgo {
    GmmKl {
        #[serde(default = "default_mc")]
        mc_samples: usize,
    },
    GmmSwd {
        #[serde(default = "default_gmm_samples")]
        gmm_samples: usize,
        #[serde(default = "default_projections")]
        n_projections: usize,
    },
    Sinkhorn {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_sinkhorn_iter")]
        max_iter: usize,
        #[serde(default = "default_sinkhorn_tol")]
        tol: f64,
        #[serde(default = "default_true")]
        debiased: bool,
    },
    Mmd {
        #[serde(default)]
        bandwidth: Bandwidth,
    },
}

fn default_mc() -> usize {
    DEFAULT_MC_SAMPLES
}
fn default_gmm_samples() -> usize {
    DEFAULT_GMM_SAMPLES
}
fn default_projections() -> usize {
    DEFAULT_PROJECTIONS
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_sinkhorn_iter() -> usize {
    DEFAULT_SINKHORN_ITER
}
fn default_sinkhorn_tol() -> f64 {
    DEFAULT_SINKHORN_TOL
}
fn default_true() -> bool {
    true
}

impl Default for DivergenceAlgo {
    fn default() -> Self {
        DivergenceAlgo::GmmKl {
            mc_samples: DEFAULT_MC_SAMPLES,
        }
    }
}

impl DivergenceAlgo {
    pub const NAMES: [&'static str; 4] = ["gmm-kl", "gmm-swd", "sinkhorn", "mmd"];

    /// The algorithm with default parameters, by command-line name.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "gmm-kl" => Self::default(),
            "gmm-swd" => DivergenceAlgo::GmmSwd {
                gmm_samples: DEFAULT_GMM_SAMPLES,
                n_projections: DEFAULT_PROJECTIONS,
            },
            "sinkhorn" => DivergenceAlgo::Sinkhorn {
                epsilon: DEFAULT_EPSILON,
                max_iter: DEFAULT_SINKHORN_ITER,
                tol: DEFAULT_SINKHORN_TOL,
                debiased: true,
            },
            "mmd" => DivergenceAlgo::Mmd {
                bandwidth: Bandwidth::Median,
            },
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            DivergenceAlgo::GmmKl { .. } => "gmm-kl",
            DivergenceAlgo::GmmSwd { .. } => "gmm-swd",
            DivergenceAlgo::Sinkhorn { .. } => "sinkhorn",
            DivergenceAlgo::Mmd { .. } => "mmd",
        }
    }

    /// Whether the algorithm compares fitted mixtures rather than raw samples.
    pub fn uses_gmm(&self) -> bool {
        matches!(self, DivergenceAlgo::GmmKl { .. } | DivergenceAlgo::GmmSwd { .. })
    }

    pub fn validate(&self) -> Result<(), DivergenceError> {
        let bad = |msg: &str| Err(DivergenceError::InvalidParameter(msg.to_string()));
        match *self {
            DivergenceAlgo::GmmKl { mc_samples: 0 } => bad("mc_samples must be at least 1"),
            DivergenceAlgo::GmmSwd { gmm_samples: 0, .. } => bad("gmm_samples must be at least 1"),
            DivergenceAlgo::GmmSwd { n_projections: 0, .. } => {
                bad("n_projections must be at least 1")
            }
            DivergenceAlgo::Sinkhorn { epsilon, .. } if !(epsilon > 0.0 && epsilon.is_finite()) => {
                bad("epsilon must be positive")
            }
            DivergenceAlgo::Sinkhorn { max_iter: 0, .. } => bad("max_iter must be at least 1"),
            DivergenceAlgo::Sinkhorn { tol, .. } if !(tol > 0.0) => bad("tol must be positive"),
            DivergenceAlgo::Mmd {
                bandwidth: Bandwidth::Fixed(s),
            } if !(s > 0.0 && s.is_finite()) => bad("bandwidth must be positive"),
            _ => Ok(()),
        }
    }
}

/// Outcome of one divergence evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceResult {
    pub value: f64,
    /// Value before clamping at zero (MMD, Sinkhorn); equal to `value` otherwise.
    pub raw_value: f64,
    pub algo: DivergenceAlgo,
    pub mc_std_error: Option<f64>,
    /// `KL(P||Q)` and `KL(Q||P)` before size weighting (KL only).
    pub kl_directions: Option<[f64; 2]>,
    pub seed: u64,
    /// False when Sinkhorn stopped at `max_iter` before reaching `tol`.
    pub converged: bool,
}

pub(crate) fn check_pair(a: &ndarray::ArrayView2<'_, f64>, b: &ndarray::ArrayView2<'_, f64>, need: usize) -> Result<(), DivergenceError> {
    if a.ncols() != b.ncols() {
        return Err(DivergenceError::DimensionMismatch(a.ncols(), b.ncols()));
    }
    let got = a.nrows().min(b.nrows());
    if got < need {
        return Err(DivergenceError::TooFewSamples { need, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_json_names() {
        for name in DivergenceAlgo::NAMES {
            let algo = DivergenceAlgo::from_name(name).unwrap();
            assert_eq!(algo.name(), name);
            let text = serde_json::to_string(&algo).unwrap();
            assert!(text.contains(&format!("\"name\":\"{name}\"")));
            let back: DivergenceAlgo = serde_json::from_str(&text).unwrap();
            assert_eq!(back, algo);
        }
        let partial: DivergenceAlgo = serde_json::from_str(r#"{"name":"sinkhorn","epsilon":0.5}"#).unwrap();
        assert_eq!(
            partial,
            DivergenceAlgo::Sinkhorn {
                epsilon: 0.5,
                max_iter: DEFAULT_SINKHORN_ITER,
                tol: DEFAULT_SINKHORN_TOL,
                debiased: true
            }
        );
        assert!(DivergenceAlgo::from_name("emd").is_none());
    }

    #[test]
    fn parameter_checks() {
        assert!(DivergenceAlgo::GmmKl { mc_samples: 0 }.validate().is_err());
        assert!(DivergenceAlgo::Sinkhorn {
            epsilon: 0.0,
            max_iter: 10,
            tol: 1e-6,
            debiased: true
        }
        .validate()
        .is_err());
        assert!(DivergenceAlgo::Mmd {
            bandwidth: Bandwidth::Fixed(-1.0)
        }
        .validate()
        .is_err());
        for name in DivergenceAlgo::NAMES {
            DivergenceAlgo::from_name(name).unwrap().validate().unwrap();
        }
    }
}
