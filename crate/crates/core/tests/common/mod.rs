#![allow(dead_code)]

use ndarray::{Array2, Axis};
use radar_core::feature_pack::{DomainEntry, FeaturePack};
use radar_core::synthetic::{gen_pack, ShiftKind, SyntheticSpec};
use radar_core::RadarConfig;

/// Small, fast engine settings.
pub fn quick_config(n_pairs: usize, seed: u64) -> RadarConfig {
    RadarConfig {
        n_pairs,
        baseline_pairs: 1 << 12,
        seed,
        ..RadarConfig::default()
    }
}

pub fn ladder(layers: usize, n: usize, severities: &[f64], seed: u64) -> FeaturePack {
    gen_pack(&SyntheticSpec::ladder(4, 8, layers, n, ShiftKind::Translation, severities, seed)).unwrap()
}

/// A new pack whose domains are the given named row sets of `pack`.
/// Rows may repeat across domains.
pub fn regroup(pack: &FeaturePack, domains: &[(&str, Vec<usize>)]) -> FeaturePack {
    let rows: Vec<usize> = domains.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    let features: Vec<Array2<f32>> = (0..pack.num_layers())
        .map(|l| pack.layer(l).unwrap().select(Axis(0), &rows))
        .collect();
    let labels = rows.iter().map(|&r| pack.labels()[r]).collect();
    let domain_ids = domains
        .iter()
        .enumerate()
        .flat_map(|(k, (_, r))| std::iter::repeat_n(k as u32, r.len()))
        .collect();
    let mut manifest = pack.manifest().clone();
    manifest.domains = domains
        .iter()
        .map(|(name, r)| DomainEntry {
            name: name.to_string(),
            sample_count: r.len(),
        })
        .collect();
    manifest.total_samples = rows.len();
    FeaturePack::new(manifest, features, labels, domain_ids).unwrap()
}
