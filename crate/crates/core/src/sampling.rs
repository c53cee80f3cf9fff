//! Stratified, inlier-weighted pair sampling.
//!
//! Pairs are drawn per class-pair stratum `(c_i, c_j)`: anchors of class `c_i`
//! from the target domain, partners of class `c_j` from the target (within
//! pairs) or from the blend union (cross pairs). Inside a stratum a pair is
//! picked with probability proportional to a product of per-sample weights.

use std::collections::HashSet;

use ndarray::ArrayView2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_pack::{FeaturePack, PackError};
use crate::seed::{rng_from_seed, sub_seed, sub_seed_indexed};

/// Bounds applied to regulated weights.
pub const WEIGHT_FLOOR: f64 = 0.1;
pub const WEIGHT_CEIL: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("temperature must be positive, got {0}")]
    InvalidTau(f64),
    #[error("requested zero pairs")]
    ZeroPairs,
    #[error("target domain '{0}' is empty")]
    EmptyTarget(String),
    #[error("blend is empty")]
    EmptyBlend,
    #[error("target domain '{0}' is also part of the blend")]
    TargetInBlend(String),
    #[error("cannot draw {requested} distinct pairs: only {available} available across all strata (short by {})", requested - available)]
    Shortfall { requested: usize, available: usize },
    #[error(transparent)]
    Pack(#[from] PackError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Uniform,
    /// Inlier-inlier pairs.
    Positive,
    /// Inlier-outlier pairs.
    Negative,
    /// First half positive, second half negative.
    #[default]
    Mix,
}

/// How raw inlier weights become sampling weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightTransform {
    /// `clamp(exp(-w / tau), 0.1, 1)`; decreasing in `w`.
    #[default]
    Decay,
    /// `clamp(exp((w - 1) / tau), 0.1, 1)`; increasing in `w`.
    Growth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingStrategy {
    pub kind: StrategyKind,
    pub replacement: bool,
    pub tau: f64,
    pub weight_transform: WeightTransform,
}

impl Default for SamplingStrategy {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Mix,
            replacement: false,
            tau: 2.0,
            weight_transform: WeightTransform::Decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Within,
    Cross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
    pub kind: PairKind,
    pub layer_basis: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Per-class means of the rows of `features`. Classes without rows are `None`.
pub fn class_centroids(features: ArrayView2<'_, f32>, labels: &[u32], num_classes: usize) -> Vec<Option<Vec<f64>>> {
    let h = features.ncols();
    let mut sums = vec![vec![0.0f64; h]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (row, &y) in features.rows().into_iter().zip(labels) {
        let y = y as usize;
        counts[y] += 1;
        for (s, &v) in sums[y].iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InlierWeights {
    pub w: Vec<f64>,
}

/// `w = 1 - minmax(dist to own class centroid)`, per class group. A group
/// whose distances are all equal gets `w = 1`.
pub fn inlier_weights(features: ArrayView2<'_, f32>, labels: &[u32], num_classes: usize) -> InlierWeights {
    let centroids = class_centroids(features, labels, num_classes);
    let dist: Vec<f64> = features
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let c = centroids[y as usize].as_ref().expect("class has rows");
            row.iter()
                .zip(c)
                .map(|(&v, &m)| (v as f64 - m).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    InlierWeights {
        w: minmax_weights(&dist, labels, num_classes),
    }
}

fn minmax_weights(dist: &[f64], labels: &[u32], num_classes: usize) -> Vec<f64> {
    let mut lo = vec![f64::INFINITY; num_classes];
    let mut hi = vec![f64::NEG_INFINITY; num_classes];
    for (&d, &y) in dist.iter().zip(labels) {
        lo[y as usize] = lo[y as usize].min(d);
        hi[y as usize] = hi[y as usize].max(d);
    }
    dist.iter()
        .zip(labels)
        .map(|(&d, &y)| {
            let (lo, hi) = (lo[y as usize], hi[y as usize]);
            let normalized = if hi > lo { (d - lo) / (hi - lo) } else { 0.0 };
            1.0 - normalized
        })
        .collect()
}

pub fn transform_weights(w: &[f64], tau: f64, transform: WeightTransform) -> Result<Vec<f64>, SamplingError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(SamplingError::InvalidTau(tau));
    }
    Ok(w.iter()
        .map(|&w| {
            let raw = match transform {
                WeightTransform::Decay => (-w / tau).exp(),
                WeightTransform::Growth => ((w - 1.0) / tau).exp(),
            };
            raw.clamp(WEIGHT_FLOOR, WEIGHT_CEIL)
        })
        .collect())
}

/// Which pairs to draw.
#[derive(Debug, Clone)]
pub struct PairRequest<'a> {
    pub kind: PairKind,
    pub target: &'a str,
    /// Ignored for within pairs.
    pub blend: &'a [&'a str],
    pub n: usize,
    pub strategy: SamplingStrategy,
    pub seed: u64,
    /// Layer whose features define centroids and inlier weights.
    pub weight_layer: usize,
}

#[derive(Debug, Clone, Copy)]
struct Member {
    row: usize,
    w: f64,
}

struct Stratum {
    id: u64,
    anchors: Vec<Member>,
    partners: Vec<Member>,
    /// Anchors and partners are the same set, so `(a, a)` pairs are excluded.
    same_set: bool,
    used: HashSet<(usize, usize)>,
}

impl Stratum {
    fn total(&self) -> usize {
        let all = self.anchors.len() * self.partners.len();
        if self.same_set {
            all - self.anchors.len()
        } else {
            all
        }
    }

    fn capacity_left(&self, replacement: bool) -> usize {
        let total = self.total();
        if total == 0 {
            0
        } else if replacement {
            usize::MAX
        } else {
            total - self.used.len()
        }
    }
}

/// Regulated weights of every row of `domains`, each domain normalized
/// against its own class centroids.
fn regulated_members(
    pack: &FeaturePack,
    domains: &[&str],
    layer: usize,
    strategy: &SamplingStrategy,
) -> Result<Vec<(Member, u32)>, SamplingError> {
    let mut out = Vec::new();
    for name in domains {
        let slice = pack.slice(name, layer)?;
        let raw = inlier_weights(slice.features.view(), &slice.labels, pack.num_classes());
        let reg = transform_weights(&raw.w, strategy.tau, strategy.weight_transform)?;
        for ((&row, &y), w) in slice.indices.iter().zip(&slice.labels).zip(reg) {
            out.push((Member { row, w }, y));
        }
    }
    Ok(out)
}

fn group_by_class(members: Vec<(Member, u32)>, num_classes: usize) -> Vec<Vec<Member>> {
    let mut groups = vec![Vec::new(); num_classes];
    for (m, y) in members {
        groups[y as usize].push(m);
    }
    groups
}

pub fn sample_pairs(pack: &FeaturePack, req: &PairRequest<'_>) -> Result<PairSet, SamplingError> {
    if req.n == 0 {
        return Err(SamplingError::ZeroPairs);
    }
    if !(req.strategy.tau > 0.0) {
        return Err(SamplingError::InvalidTau(req.strategy.tau));
    }
    if pack.rows_of(req.target)?.is_empty() {
        return Err(SamplingError::EmptyTarget(req.target.to_string()));
    }
    if req.kind == PairKind::Cross {
        if req.blend.is_empty() {
            return Err(SamplingError::EmptyBlend);
        }
        if req.blend.contains(&req.target) {
            return Err(SamplingError::TargetInBlend(req.target.to_string()));
        }
    }
    let c = pack.num_classes();
    let anchors = group_by_class(
        regulated_members(pack, &[req.target], req.weight_layer, &req.strategy)?,
        c,
    );
    let partners = match req.kind {
        PairKind::Within => anchors.clone(),
        PairKind::Cross => group_by_class(
            regulated_members(pack, req.blend, req.weight_layer, &req.strategy)?,
            c,
        ),
    };

    let mut warnings = Vec::new();
    let mut strata = Vec::new();
    for ci in 0..c {
        for cj in 0..c {
            if anchors[ci].is_empty() || partners[cj].is_empty() {
                warnings.push(format!("stratum ({ci},{cj}) skipped: empty side"));
                continue;
            }
            strata.push(Stratum {
                id: (ci * c + cj) as u64,
                anchors: anchors[ci].clone(),
                partners: partners[cj].clone(),
                same_set: req.kind == PairKind::Within && ci == cj,
                used: HashSet::new(),
            });
        }
    }

    let replacement = req.strategy.replacement;
    if !replacement {
        let available: usize = strata.iter().map(Stratum::total).sum();
        if available < req.n {
            return Err(SamplingError::Shortfall {
                requested: req.n,
                available,
            });
        }
    } else if strata.iter().all(|s| s.total() == 0) {
        return Err(SamplingError::Shortfall {
            requested: req.n,
            available: 0,
        });
    }

    let draws: Vec<(StrategyKind, usize, &str)> = match req.strategy.kind {
        StrategyKind::Mix => vec![
            (StrategyKind::Positive, req.n.div_ceil(2), "positive"),
            (StrategyKind::Negative, req.n / 2, "negative"),
        ],
        k => vec![(k, req.n, "main")],
    };

    let mut pairs = Vec::with_capacity(req.n);
    for (kind, n, tag) in draws {
        if n == 0 {
            continue;
        }
        let caps: Vec<usize> = strata.iter().map(|s| s.capacity_left(replacement)).collect();
        let quotas = allocate(n, &caps);
        let draw_seed = sub_seed(req.seed, tag);
        for (stratum, quota) in strata.iter_mut().zip(quotas) {
            if quota == 0 {
                continue;
            }
            let seed = sub_seed_indexed(draw_seed, "stratum", stratum.id);
            draw_stratum(stratum, kind, quota, replacement, seed, &mut pairs, &mut warnings);
        }
    }

    Ok(PairSet {
        pairs,
        kind: req.kind,
        layer_basis: req.weight_layer,
        seed: req.seed,
        warnings,
    })
}

/// Split `n` as evenly as possible over slots with the given capacities.
/// Remainders go round-robin in slot order; overflow from saturated slots is
/// spread over the others the same way.
pub fn allocate(n: usize, caps: &[usize]) -> Vec<usize> {
    let mut quotas = vec![0usize; caps.len()];
    let mut active: Vec<usize> = (0..caps.len()).filter(|&i| caps[i] > 0).collect();
    let mut remaining = n;
    while remaining > 0 && !active.is_empty() {
        let share = remaining / active.len();
        let extra = remaining % active.len();
        let want: Vec<usize> = (0..active.len()).map(|j| share + usize::from(j < extra)).collect();
        let saturated: Vec<usize> = active
            .iter()
            .zip(&want)
            .filter(|(&i, &w)| quotas[i] + w >= caps[i])
            .map(|(&i, _)| i)
            .collect();
        if saturated.is_empty() {
            for (&i, w) in active.iter().zip(want) {
                quotas[i] += w;
            }
            remaining = 0;
        } else {
            // Fill saturated slots to capacity and redistribute the rest.
            for &i in &saturated {
                remaining -= caps[i] - quotas[i];
                quotas[i] = caps[i];
            }
            active.retain(|i| !saturated.contains(i));
        }
    }
    quotas
}

fn pair_weights(kind: StrategyKind, anchors: &[Member], partners: &[Member]) -> (Vec<f64>, Vec<f64>) {
    let a = anchors
        .iter()
        .map(|m| if kind == StrategyKind::Uniform { 1.0 } else { m.w })
        .collect();
    let p = partners
        .iter()
        .map(|m| match kind {
            StrategyKind::Uniform => 1.0,
            StrategyKind::Positive | StrategyKind::Mix => m.w,
            StrategyKind::Negative => 1.0 - m.w,
        })
        .collect();
    (a, p)
}

fn draw_stratum(
    s: &mut Stratum,
    kind: StrategyKind,
    quota: usize,
    replacement: bool,
    seed: u64,
    out: &mut Vec<(usize, usize)>,
    warnings: &mut Vec<String>,
) {
    let mut rng = rng_from_seed(seed);
    let (mut wa, mut wp) = pair_weights(kind, &s.anchors, &s.partners);

    // Weight mass on pairs that may actually be drawn.
    let mass = |wa: &[f64], wp: &[f64]| -> f64 {
        let total = wa.iter().sum::<f64>() * wp.iter().sum::<f64>();
        if s.same_set {
            total - wa.iter().zip(wp).map(|(a, p)| a * p).sum::<f64>()
        } else {
            total
        }
    };
    if mass(&wa, &wp) <= 1e-300 {
        warnings.push(format!("stratum {} has zero weight mass; sampling uniformly", s.id));
        wa.fill(1.0);
        wp.fill(1.0);
    }

    if replacement {
        let da = WeightedIndex::new(&wa).expect("positive anchor weights");
        let dp = WeightedIndex::new(&wp).expect("positive partner weights");
        for _ in 0..quota {
            loop {
                let i = da.sample(&mut rng);
                let j = dp.sample(&mut rng);
                if s.same_set && i == j {
                    continue;
                }
                out.push((s.anchors[i].row, s.partners[j].row));
                break;
            }
        }
        return;
    }

    // Without replacement. Both routes realize successive weighted draws
    // without repeats: rejection of repeats from the product distribution when
    // the quota is small against the positive-weight pool, exponential keys
    // over the enumerated stratum otherwise.
    let pos_a = wa.iter().filter(|&&w| w > 0.0).count();
    let pos_p = wp.iter().filter(|&&w| w > 0.0).count();
    let overlap = if s.same_set {
        wa.iter().zip(&wp).filter(|(&a, &p)| a > 0.0 && p > 0.0).count()
    } else {
        0
    };
    let pool = (pos_a * pos_p - overlap).saturating_sub(s.used.len());
    if quota * 2 <= pool {
        let da = WeightedIndex::new(&wa).expect("positive anchor weights");
        let dp = WeightedIndex::new(&wp).expect("positive partner weights");
        let mut taken = 0;
        while taken < quota {
            let i = da.sample(&mut rng);
            let j = dp.sample(&mut rng);
            if s.same_set && i == j {
                continue;
            }
            let pair = (s.anchors[i].row, s.partners[j].row);
            if s.used.insert(pair) {
                out.push(pair);
                taken += 1;
            }
        }
    } else {
        let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(s.total());
        for (i, &a) in wa.iter().enumerate() {
            for (j, &p) in wp.iter().enumerate() {
                if s.same_set && i == j {
                    continue;
                }
                let pair = (s.anchors[i].row, s.partners[j].row);
                if s.used.contains(&pair) {
                    continue;
                }
                let e: f64 = rng.sample(Exp1);
                let w = a * p;
                let key = if w > 0.0 { e / w } else { f64::INFINITY };
                keyed.push((key, i, j));
            }
        }
        keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        for &(_, i, j) in keyed.iter().take(quota) {
            let pair = (s.anchors[i].row, s.partners[j].row);
            s.used.insert(pair);
            out.push(pair);
        }
    }
}

/// Uniform ordered pairs of distinct rows from `pool`, with replacement
/// across pairs. Used for standardization baselines.
pub fn uniform_pool_pairs(pool: &[usize], n: usize, seed: u64) -> Vec<(usize, usize)> {
    assert!(pool.len() >= 2, "pool needs two rows");
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| loop {
            let a = rng.random_range(0..pool.len());
            let b = rng.random_range(0..pool.len());
            if a != b {
                break (pool[a], pool[b]);
            }
        })
        .collect()
}
