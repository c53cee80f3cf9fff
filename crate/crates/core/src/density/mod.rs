//! Density estimation over descriptor space.

mod gmm;
mod kmeans;
pub(crate) mod linalg;
mod standardize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gmm::{fit_gmm, gmm_logpdf, gmm_sample, Covariances, GmmEvaluator, GmmFit, GmmModel, GmmOptions};
pub use kmeans::{kmeans_init, KMeans, KMEANS_MAX_ITER, KMEANS_N_INIT, KMEANS_TOL};
pub use standardize::{apply_standardizer, fit_standardizer, StandardizeAccumulator, StandardizeStats, STD_FLOOR};

/// Diagonal regularization added to every covariance.
pub const DEFAULT_REG: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 100;
/// Convergence threshold on the change of the average log-likelihood.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Number of mixture components for a target with `num_classes` classes.
pub fn components_for_classes(num_classes: usize) -> usize {
    (2 * num_classes).min(50)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Diag,
    Full,
    Tied,
    Spherical,
}

impl CovarianceKind {
    pub const ALL: [CovarianceKind; 4] = [
        CovarianceKind::Diag,
        CovarianceKind::Full,
        CovarianceKind::Tied,
        CovarianceKind::Spherical,
    ];
}

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("need at least {k} rows to fit {k} components, got {rows}")]
    TooFewRows { rows: usize, k: usize },
    #[error("component count must be at least 1")]
    ZeroComponents,
    #[error("input is empty")]
    EmptyInput,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("dimension mismatch: model has {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance of component {component} is not positive definite")]
    NotPositiveDefinite { component: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_rule() {
        assert_eq!(components_for_classes(10), 20);
        assert_eq!(components_for_classes(30), 50);
        assert_eq!(components_for_classes(5), 10);
    }
}
