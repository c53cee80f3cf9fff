//! Transferability estimation from the geometry of layer-to-layer feature
//! trajectories.
//!
//! The engine compares the distribution of trajectory descriptors built from
//! pairs of samples inside a target domain against the distribution built from
//! target/source pairs. The larger the divergence between the two, the less a
//! source blend is expected to help the target task.
//!
//! Module map:
//!
//! - [`feature_pack`]: on-disk layer-wise features shared with extractors.
//! - [`geometry`]: displacement triads and step/trajectory descriptors.
//! - [`sampling`]: stratified, inlier-weighted pair sampling.
//! - [`density`]: k-means, Gaussian mixtures, standardization.
//! - [`divergence`]: GMM+KL, GMM+SWD, Sinkhorn and MMD estimators.
//! - [`pipeline`]: end-to-end scores for a (target, blend, layer) triple.
//! - [`evaluation`]: blends, Spearman, MCI, centroid baseline.
//! - [`synthetic`]: synthetic packs, proxy gains, total-variation checks.

pub mod config;
pub mod density;
pub mod divergence;
pub mod error;
pub mod evaluation;
pub mod feature_pack;
pub mod geometry;
pub mod pipeline;
pub mod sampling;
pub mod seed;
pub mod synthetic;

pub use config::RadarConfig;
pub use error::{RadarError, Result};
pub use feature_pack::FeaturePack;
pub use pipeline::{RadarEngine, RadarScore};

/// Engine version reported in run records.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
