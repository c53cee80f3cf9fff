//! Blend enumeration, rank correlation against measured gains, and the
//! centroid-distance baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{RadarError, Result};
use crate::feature_pack::FeaturePack;
use crate::pipeline::{blend_id, RadarEngine, RadarScore};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 values, got {0}")]
    TooShort(usize),
    #[error("degenerate ranking: all values are equal")]
    Degenerate,
    #[error("no sources given")]
    NoSources,
    #[error("missing gains for {}", format_cells(.0))]
    MissingGains(Vec<(String, usize)>),
    #[error("score grids differ: {0}")]
    GridMismatch(String),
    #[error("layer {layer} has {blends} blend(s); at least 2 are needed")]
    TooFewBlends { layer: usize, blends: usize },
    #[error("no layer has a non-degenerate ranking")]
    NoValidLayers,
    #[error("gains table row {row}: {message}")]
    BadGains { row: usize, message: String },
    #[error("gains csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn format_cells(cells: &[(String, usize)]) -> String {
    cells
        .iter()
        .map(|(b, l)| format!("({b}, layer {l})"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BlendMode {
    /// One blend per source.
    #[default]
    Pairwise,
    /// Every non-empty subset of the sources.
    Full,
}

/// Blends of `sources`, each a sorted list of names. Full mode enumerates
/// subsets by binary counting over the sorted names.
pub fn enumerate_blends<S: AsRef<str>>(sources: &[S], mode: BlendMode) -> Result<Vec<Vec<String>>, EvalError> {
    let mut names: Vec<String> = sources.iter().map(|s| s.as_ref().to_string()).collect();
    names.sort();
    names.dedup();
    if names.is_empty() {
        return Err(EvalError::NoSources);
    }
    Ok(match mode {
        BlendMode::Pairwise => names.into_iter().map(|n| vec![n]).collect(),
        BlendMode::Full => (1u64..(1 << names.len()))
            .map(|mask| {
                names
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .map(|(_, n)| n.clone())
                    .collect()
            })
            .collect(),
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EvalError::TooShort(xs.len()));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::Degenerate);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn centroid(pack: &FeaturePack, rows: &[usize], layer: usize) -> Result<Vec<f64>> {
    let feats = pack.layer(layer)?;
    let mut c = vec![0.0; feats.ncols()];
    for &r in rows {
        for (acc, &v) in c.iter_mut().zip(feats.row(r)) {
            *acc += v as f64;
        }
    }
    let n = rows.len().max(1) as f64;
    Ok(c.into_iter().map(|v| v / n).collect())
}

/// Distance between the feature centroids of two domains.
pub fn centroid_distance(pack: &FeaturePack, a: &str, b: &str, layer: usize) -> Result<f64> {
    centroid_distance_sets(pack, &[a], &[b], layer)
}

/// Distance between the centroids of two unions of domains.
pub fn centroid_distance_sets(pack: &FeaturePack, a: &[&str], b: &[&str], layer: usize) -> Result<f64> {
    let ra = pack.union_rows(a)?;
    let rb = pack.union_rows(b)?;
    for (rows, names) in [(&ra, a), (&rb, b)] {
        if rows.is_empty() {
            return Err(RadarError::Request(format!("domain set {names:?} has no samples")));
        }
    }
    let (ca, cb) = (centroid(pack, &ra, layer)?, centroid(pack, &rb, layer)?);
    Ok(ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Pairwise centroid distances between all domains, in manifest order.
pub fn centroid_matrix(pack: &FeaturePack, layer: usize) -> Result<Array2<f64>> {
    pack.layer(layer)?;
    let k = pack.manifest().domains.len();
    let centroids = (0..k)
        .map(|d| centroid(pack, pack.domain_rows(d), layer))
        .collect::<Result<Vec<_>>>()?;
    let mut m = Array2::zeros((k, k));
    for i in 0..k {
        for j in i + 1..k {
            let d = centroids[i]
                .iter()
                .zip(&centroids[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            m[[i, j]] = d;
            m[[j, i]] = d;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsRow {
    pub blend_id: String,
    pub layer: usize,
    pub acc_blend: f64,
    pub acc_empty: f64,
    pub delta: f64,
}

/// Measured transfer gains per (blend, layer).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GainsTable {
    pub rows: Vec<GainsRow>,
}

impl GainsTable {
    pub fn from_rows(rows: Vec<GainsRow>) -> Result<Self, EvalError> {
        for (i, r) in rows.iter().enumerate() {
            let bad = |message: String| EvalError::BadGains { row: i + 1, message };
            for (name, v) in [("acc_blend", r.acc_blend), ("acc_empty", r.acc_empty)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad(format!("{name} = {v} outside [0, 1]")));
                }
            }
            if (r.delta - (r.acc_blend - r.acc_empty)).abs() > 1e-12 {
                return Err(bad(format!("delta {} != acc_blend - acc_empty", r.delta)));
            }
            if r.blend_id.is_empty() {
                return Err(bad("empty blend_id".into()));
            }
        }
        Ok(Self { rows })
    }

    pub fn read_from(reader: impl Read) -> Result<Self, EvalError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = rdr.deserialize().collect::<Result<Vec<GainsRow>, _>>()?;
        Self::from_rows(rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::read_from(std::fs::File::open(path)?)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["blend_id", "layer", "acc_blend", "acc_empty", "delta"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn layers(&self) -> BTreeSet<usize> {
        self.rows.iter().map(|r| r.layer).collect()
    }

    /// `delta` per (blend_id, layer). A table that covers a single layer is
    /// broadcast to `layers`, with a warning.
    pub fn delta_grid(&self, layers: &BTreeSet<usize>, warnings: &mut Vec<String>) -> BTreeMap<(String, usize), f64> {
        let own = self.layers();
        let broadcast = own.len() == 1 && layers.len() > 1;
        if broadcast {
            warnings.push(format!(
                "gains cover only layer {}; broadcasting to all layers",
                own.iter().next().expect("one layer")
            ));
        }
        let mut out = BTreeMap::new();
        for r in &self.rows {
            if broadcast {
                for &l in layers {
                    out.insert((r.blend_id.clone(), l), r.delta);
                }
            } else {
                out.insert((r.blend_id.clone(), r.layer), r.delta);
            }
        }
        out
    }
}

/// Values per (blend_id, layer).
pub type ScoreGrid = BTreeMap<(String, usize), f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEval {
    pub layer: usize,
    pub rho_metric: Option<f64>,
    pub rho_base: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub layers: Vec<LayerEval>,
    /// Layers entering the means.
    pub used_layers: Vec<usize>,
    pub mean_rho_metric: f64,
    pub mean_rho_base: f64,
    /// `mean_rho_metric - mean_rho_base`; lower is better.
    pub mci: f64,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:+.4}"));
        let mut s = String::from("layer  rho_metric  rho_base\n");
        for l in &self.layers {
            s.push_str(&format!("{:>5}  {:>10}  {:>8}\n", l.layer, fmt(l.rho_metric), fmt(l.rho_base)));
        }
        s.push_str(&format!(
            " mean  {:>+10.4}  {:>+8.4}\nMCI {:+.4} ({:+.2} pt)\n",
            self.mean_rho_metric,
            self.mean_rho_base,
            self.mci,
            100.0 * self.mci
        ));
        s
    }
}

/// Correlate a metric and the centroid baseline with the gains, per layer.
///
/// Both are divergences (higher means less transfer expected), so neither is
/// negated. A layer where any ranking is constant is left out of the means.
pub fn evaluate(metric: &ScoreGrid, baseline: &ScoreGrid, gains: &GainsTable) -> Result<EvalReport, EvalError> {
    let metric_keys: BTreeSet<_> = metric.keys().collect();
    let base_keys: BTreeSet<_> = baseline.keys().collect();
    if metric_keys != base_keys {
        return Err(EvalError::GridMismatch("metric and baseline cover different cells".into()));
    }
    let layers: BTreeSet<usize> = metric.keys().map(|(_, l)| *l).collect();
    let mut warnings = Vec::new();
    let deltas = gains.delta_grid(&layers, &mut warnings);
    let missing: Vec<(String, usize)> = metric.keys().filter(|k| !deltas.contains_key(*k)).cloned().collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingGains(missing));
    }

    let mut out = Vec::new();
    let mut used = Vec::new();
    let (mut sum_m, mut sum_b) = (0.0, 0.0);
    for &layer in &layers {
        let cells: Vec<&(String, usize)> = metric.keys().filter(|(_, l)| *l == layer).collect();
        if cells.len() < 2 {
            return Err(EvalError::TooFewBlends { layer, blends: cells.len() });
        }
        let xs: Vec<f64> = cells.iter().map(|k| metric[*k]).collect();
        let bs: Vec<f64> = cells.iter().map(|k| baseline[*k]).collect();
        let ys: Vec<f64> = cells.iter().map(|k| deltas[*k]).collect();
        let rm = spearman(&xs, &ys).ok();
        let rb = spearman(&bs, &ys).ok();
        if let (Some(m), Some(b)) = (rm, rb) {
            sum_m += m;
            sum_b += b;
            used.push(layer);
        } else {
            warnings.push(format!("layer {layer}: constant ranking, left out of the means"));
        }
        out.push(LayerEval {
            layer,
            rho_metric: rm,
            rho_base: rb,
        });
    }
    if used.is_empty() {
        return Err(EvalError::NoValidLayers);
    }
    let n = used.len() as f64;
    let (mean_m, mean_b) = (sum_m / n, sum_b / n);
    Ok(EvalReport {
        layers: out,
        used_layers: used,
        mean_rho_metric: mean_m,
        mean_rho_base: mean_b,
        mci: mean_m - mean_b,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RankBy {
    #[default]
    Mean,
    Layer(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedBlend {
    pub blend_id: String,
    pub sources: Vec<String>,
    /// Ranking key: the score at the chosen layer or the mean over layers.
    pub key: f64,
    pub scores: Vec<RadarScore>,
    pub centroid_distance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub target: String,
    pub layers: Vec<usize>,
    /// Ascending key: the first blend is predicted to transfer best.
    pub blends: Vec<RankedBlend>,
    pub report: Option<EvalReport>,
}

impl Ranking {
    pub fn score_grid(&self) -> ScoreGrid {
        self.grid(|b, i| b.scores[i].value)
    }

    pub fn baseline_grid(&self) -> ScoreGrid {
        self.grid(|b, i| b.centroid_distance[i])
    }

    fn grid(&self, f: impl Fn(&RankedBlend, usize) -> f64) -> ScoreGrid {
        let mut g = ScoreGrid::new();
        for b in &self.blends {
            for (i, &l) in self.layers.iter().enumerate() {
                g.insert((b.blend_id.clone(), l), f(b, i));
            }
        }
        g
    }
}

/// Score every blend at every layer in `layers` (all layers when `None`) and
/// rank by ascending score. Jobs run on the current rayon pool; the output
/// order does not depend on scheduling.
pub fn rank_blends(
    engine: &RadarEngine<'_>,
    target: &str,
    blends: &[Vec<String>],
    layers: Option<&[usize]>,
    rank_by: RankBy,
    gains: Option<&GainsTable>,
) -> Result<Ranking> {
    use rayon::prelude::*;

    let pack = engine.pack();
    let layers: Vec<usize> = match layers {
        Some(l) => l.to_vec(),
        None => (0..pack.num_layers()).collect(),
    };
    if let RankBy::Layer(l) = rank_by {
        if !layers.contains(&l) {
            return Err(RadarError::Request(format!("ranking layer {l} is not among the scored layers")));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..blends.len())
        .flat_map(|b| layers.iter().map(move |&l| (b, l)))
        .collect();
    // within descriptors first, so parallel jobs share the cache
    if let Some(first) = blends.first() {
        let srcs: Vec<&str> = first.iter().map(String::as_str).collect();
        layers
            .par_iter()
            .map(|&l| engine.radar_score(target, &srcs, l).map(|_| ()))
            .collect::<Result<Vec<_>>>()?;
    }
    let results: Vec<RadarScore> = jobs
        .par_iter()
        .map(|&(b, l)| {
            let srcs: Vec<&str> = blends[b].iter().map(String::as_str).collect();
            engine.radar_score(target, &srcs, l)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ranked = Vec::with_capacity(blends.len());
    for (b, sources) in blends.iter().enumerate() {
        let srcs: Vec<&str> = sources.iter().map(String::as_str).collect();
        let scores: Vec<RadarScore> = results[b * layers.len()..(b + 1) * layers.len()].to_vec();
        let centroid = layers
            .iter()
            .map(|&l| centroid_distance_sets(pack, &[target], &srcs, l))
            .collect::<Result<Vec<_>>>()?;
        let key = match rank_by {
            RankBy::Mean => scores.iter().map(|s| s.value).sum::<f64>() / scores.len() as f64,
            RankBy::Layer(l) => scores[layers.iter().position(|&x| x == l).expect("checked")].value,
        };
        ranked.push(RankedBlend {
            blend_id: blend_id(sources),
            sources: sources.clone(),
            key,
            scores,
            centroid_distance: centroid,
        });
    }
    ranked.sort_by(|a, b| a.key.total_cmp(&b.key));
    let mut ranking = Ranking {
        target: target.to_string(),
        layers,
        blends: ranked,
        report: None,
    };
    if let Some(g) = gains {
        if ranking.blends.len() >= 2 {
            ranking.report = Some(evaluate(&ranking.score_grid(), &ranking.baseline_grid(), g)?);
        }
    }
    Ok(ranking)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_pack::tests::toy_pack;
    use proptest::prelude::*;

    #[test]
    fn blend_enumeration() {
        let full = enumerate_blends(&["sketches", "paintings"], BlendMode::Full).unwrap();
        assert_eq!(
            full,
            vec![
                vec!["paintings".to_string()],
                vec!["sketches".to_string()],
                vec!["paintings".to_string(), "sketches".to_string()]
            ]
        );
        assert_eq!(enumerate_blends(&["a"], BlendMode::Full).unwrap().len(), 1);
        assert_eq!(enumerate_blends(&["a"], BlendMode::Pairwise).unwrap().len(), 1);
        let five = enumerate_blends(&["a", "b", "c", "d", "e"], BlendMode::Full).unwrap();
        assert_eq!(five.len(), 31);
        for single in enumerate_blends(&["a", "b", "c", "d", "e"], BlendMode::Pairwise).unwrap() {
            assert!(five.contains(&single));
        }
        assert!(matches!(enumerate_blends::<&str>(&[], BlendMode::Full), Err(EvalError::NoSources)));
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(EvalError::Degenerate)));
        assert!(matches!(spearman(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch(1, 2))));
    }

    #[test]
    fn spearman_with_ties() {
        // ranks (1, 2.5, 2.5, 4) and (1, 3, 2, 4)
        let rx = [1.0, 2.5, 2.5, 4.0];
        let ry = [1.0, 3.0, 2.0, 4.0];
        let m = 2.5;
        let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - m) * (b - m)).sum();
        let sxx: f64 = rx.iter().map(|a| (a - m) * (a - m)).sum();
        let syy: f64 = ry.iter().map(|b| (b - m) * (b - m)).sum();
        let want = sxy / (sxx * syy).sqrt();
        let got = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn spearman_is_rank_invariant(xs in prop::collection::vec(-100.0f64..100.0, 3..20), seed in 0u64..1000) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| (x * 0.37 + (i as u64 * seed % 17) as f64).sin()).collect();
            if let Ok(r) = spearman(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let tx: Vec<f64> = xs.iter().map(|x| x.powi(3) + 5.0).collect();
                let ty: Vec<f64> = ys.iter().map(|y| y.exp()).collect();
                let r2 = spearman(&tx, &ty).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
            }
        }

        #[test]
        fn evaluate_permutation_and_antisymmetry(vals in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 4..8), rot in 0usize..8) {
            let grid = |f: &dyn Fn(&(f64, f64, f64)) -> f64| -> ScoreGrid {
                vals.iter().enumerate().flat_map(|(i, v)| (0..2).map(move |l| ((format!("b{i}"), l), f(v) + l as f64 * 0.01))).collect()
            };
            let metric = grid(&|v| v.0);
            let base = grid(&|v| v.1);
            let mut rows: Vec<GainsRow> = vals.iter().enumerate().flat_map(|(i, v)| (0..2).map(move |l| GainsRow {
                blend_id: format!("b{i}"), layer: l, acc_blend: v.2, acc_empty: 0.5, delta: v.2 - 0.5,
            })).collect();
            let a = evaluate(&metric, &base, &GainsTable::from_rows(rows.clone()).unwrap());
            let swapped = evaluate(&base, &metric, &GainsTable::from_rows(rows.clone()).unwrap());
            let k = rot % rows.len();
            rows.rotate_left(k);
            let b = evaluate(&metric, &base, &GainsTable::from_rows(rows).unwrap());
            if let (Ok(a), Ok(b), Ok(s)) = (a, b, swapped) {
                prop_assert_eq!(a.mci, b.mci);
                prop_assert!((a.mci + s.mci).abs() < 1e-12);
            }
        }
    }

    fn grid_from(values: &[f64]) -> ScoreGrid {
        values
            .iter()
            .enumerate()
            .flat_map(|(i, &v)| (0..3).map(move |l| ((format!("b{i}"), l), v)))
            .collect()
    }

    fn gains_from(deltas: &[f64]) -> GainsTable {
        GainsTable::from_rows(
            deltas
                .iter()
                .enumerate()
                .flat_map(|(i, &d)| {
                    (0..3).map(move |l| GainsRow {
                        blend_id: format!("b{i}"),
                        layer: l,
                        acc_blend: 0.5 + d,
                        acc_empty: 0.5,
                        delta: 0.5 + d - 0.5,
                    })
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mci_of_perfect_metric() {
        let deltas = [0.1, -0.05, 0.02, -0.2];
        let metric = grid_from(&deltas.map(|d| -d));
        let base = grid_from(&[0.3, 0.1, 0.4, 0.2]);
        let rb = spearman(&[0.3, 0.1, 0.4, 0.2], &deltas).unwrap();
        let r = evaluate(&metric, &base, &gains_from(&deltas)).unwrap();
        assert!(r.layers.iter().all(|l| l.rho_metric == Some(-1.0)));
        assert!((r.mci - (-1.0 - rb)).abs() < 1e-12);
        let same = evaluate(&base, &base, &gains_from(&deltas)).unwrap();
        assert_eq!(same.mci, 0.0);
    }

    #[test]
    fn missing_cells_are_named() {
        let deltas = [0.1, -0.05];
        let metric = grid_from(&[1.0, 2.0, 3.0]);
        let err = evaluate(&metric, &metric, &gains_from(&deltas)).unwrap_err();
        match err {
            EvalError::MissingGains(cells) => {
                assert_eq!(cells.len(), 3);
                assert!(err_text(&cells).contains("(b2, layer 0)"));
            }
            e => panic!("{e}"),
        }
    }

    fn err_text(cells: &[(String, usize)]) -> String {
        EvalError::MissingGains(cells.to_vec()).to_string()
    }

    #[test]
    fn constant_layer_is_skipped() {
        let mut metric = grid_from(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            metric.insert((format!("b{i}"), 1), 7.0);
        }
        let r = evaluate(&metric, &grid_from(&[3.0, 1.0, 2.0]), &gains_from(&[0.1, 0.0, -0.1])).unwrap();
        assert_eq!(r.used_layers, vec![0, 2]);
        assert_eq!(r.layers[1].rho_metric, None);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn single_layer_gains_broadcast() {
        let gains = GainsTable::from_rows(
            (0..3)
                .map(|i| GainsRow {
                    blend_id: format!("b{i}"),
                    layer: 0,
                    acc_blend: 0.5,
                    acc_empty: 0.4 + 0.05 * i as f64,
                    delta: 0.5 - (0.4 + 0.05 * i as f64),
                })
                .collect(),
        )
        .unwrap();
        let r = evaluate(&grid_from(&[1.0, 2.0, 3.0]), &grid_from(&[3.0, 1.0, 2.0]), &gains).unwrap();
        assert_eq!(r.used_layers.len(), 3);
        assert!(r.warnings[0].contains("broadcasting"));
    }

    #[test]
    fn gains_csv_round_trip_and_checks() {
        let g = gains_from(&[0.1, -0.1]);
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("blend_id,layer,acc_blend,acc_empty,delta\n"));
        assert_eq!(GainsTable::read_from(buf.as_slice()).unwrap(), g);
        let bad = "blend_id,layer,acc_blend,acc_empty,delta\na,0,0.9,0.5,0.3\n";
        assert!(matches!(GainsTable::read_from(bad.as_bytes()), Err(EvalError::BadGains { row: 1, .. })));
        let range = "blend_id,layer,acc_blend,acc_empty,delta\na,0,1.5,0.5,1.0\n";
        assert!(GainsTable::read_from(range.as_bytes()).is_err());
    }

    #[test]
    fn centroid_distances() {
        let pack = toy_pack(&[3, 3], &[20, 30, 25], 2, 7);
        assert_eq!(centroid_distance(&pack, "d0", "d0", 0).unwrap(), 0.0);
        let m = centroid_matrix(&pack, 1).unwrap();
        for i in 0..3 {
            assert_eq!(m[[i, i]], 0.0);
            for j in 0..3 {
                assert_eq!(m[[i, j]], m[[j, i]]);
                let direct = centroid_distance(&pack, &format!("d{i}"), &format!("d{j}"), 1).unwrap();
                assert!((m[[i, j]] - direct).abs() < 1e-12);
            }
        }
        // brute force
        let mean = |d: &str| {
            let s = pack.slice(d, 0).unwrap();
            s.features.mapv(|v| v as f64).mean_axis(ndarray::Axis(0)).unwrap()
        };
        let diff = mean("d0") - mean("d2");
        let want = diff.dot(&diff).sqrt();
        assert!((centroid_distance(&pack, "d0", "d2", 0).unwrap() - want).abs() < 1e-9);
        assert!(centroid_distance(&pack, "d0", "nope", 0).is_err());
    }
}
