//! Synthetic feature packs with controllable domain shift, a nearest-centroid
//! stand-in for probe accuracies, and histogram total-variation checks.
//!
//! Every domain starts from the same Gaussian class clusters. A domain's shift
//! is applied to its layer-0 features; deeper layers come from one
//! deterministic map shared by all domains:
//! a rotation within a random plane drawn per layer, a uniform contraction,
//! and an optional `tanh`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Result;
use crate::evaluation::{GainsRow, GainsTable};
use crate::feature_pack::{DomainEntry, FeaturePack, PackError, PackManifest, FORMAT_VERSION};
use crate::pipeline::blend_id;
use crate::seed::{rng_from_seed, sub_seed, sub_seed_indexed, EngineRng};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("class {0} has no target samples to hold out")]
    EmptyHoldout(usize),
    #[error("histograms need 1 to 3 dimensions, got {0}")]
    HistogramDims(usize),
    #[error("histogram input is empty")]
    EmptyInput,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Pack(#[from] PackError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    /// Rotation by `severity` radians in a fixed random plane.
    Rotation,
    /// Translation by `severity` along a fixed random unit vector.
    Translation,
    /// Additive isotropic Gaussian noise with standard deviation `severity`.
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    pub name: String,
    pub shift: ShiftKind,
    pub severity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerMap {
    /// Rotation angle per layer, radians.
    pub angle: f64,
    /// Uniform contraction factor in (0, 1].
    pub contraction: f64,
    pub tanh: bool,
}

impl Default for LayerMap {
    fn default() -> Self {
        Self {
            angle: 0.3,
            contraction: 0.9,
            tanh: false,
        }
    }
}

impl LayerMap {
    pub fn identity() -> Self {
        Self {
            angle: 0.0,
            contraction: 1.0,
            tanh: false,
        }
    }

    /// Linear part of the map into `layer`: the contraction times a rotation
    /// by `angle` within a random plane drawn for that layer. A zero angle
    /// gives exactly `contraction * I`.
    pub fn linear_part(&self, dim: usize, layer: usize, seed: u64) -> Array2<f64> {
        let mut m = Array2::<f64>::eye(dim);
        if self.angle != 0.0 && dim >= 2 {
            let (u, v) = rotation_plane(&mut rng_from_seed(sub_seed_indexed(seed, "layer_plane", layer as u64)), dim);
            let (s, c) = self.angle.sin_cos();
            for i in 0..dim {
                for j in 0..dim {
                    m[[i, j]] += (c - 1.0) * (u[i] * u[j] + v[i] * v[j]) + s * (v[i] * u[j] - u[i] * v[j]);
                }
            }
        }
        m * self.contraction
    }

    /// Rows of `h` pushed through one layer with the given linear part.
    pub fn forward(&self, h: ArrayView2<'_, f64>, linear: &Array2<f64>) -> Array2<f64> {
        let mut out = h.dot(&linear.t());
        if self.tanh {
            out.mapv_inplace(f64::tanh);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub layers: usize,
    pub samples_per_domain: usize,
    /// Norm of every class mean.
    pub class_separation: f64,
    pub domains: Vec<DomainShift>,
    #[serde(default)]
    pub layer_map: LayerMap,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    /// A base domain named `target` plus one domain `s{i}` per severity.
    pub fn ladder(
        num_classes: usize,
        dim: usize,
        layers: usize,
        samples_per_domain: usize,
        shift: ShiftKind,
        severities: &[f64],
        seed: u64,
    ) -> Self {
        let mut domains = vec![DomainShift {
            name: "target".into(),
            shift,
            severity: 0.0,
        }];
        domains.extend(severities.iter().enumerate().map(|(i, &s)| DomainShift {
            name: format!("s{}", i + 1),
            shift,
            severity: s,
        }));
        Self {
            num_classes,
            dim,
            layers,
            samples_per_domain,
            class_separation: 3.0,
            domains,
            layer_map: LayerMap::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::InvalidSpec(m));
        if self.num_classes == 0 || self.dim == 0 {
            return bad("num_classes and dim must be at least 1".into());
        }
        if self.layers < 2 {
            return bad(format!("need at least 2 layers, got {}", self.layers));
        }
        if self.samples_per_domain < self.num_classes {
            return bad("samples_per_domain must cover every class".into());
        }
        if self.domains.is_empty() {
            return bad("no domains".into());
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return bad("class_separation must be finite and non-negative".into());
        }
        let m = &self.layer_map;
        if !(m.contraction > 0.0 && m.contraction <= 1.0) || !m.angle.is_finite() {
            return bad("layer map needs contraction in (0, 1] and a finite angle".into());
        }
        for (i, d) in self.domains.iter().enumerate() {
            if !(d.severity >= 0.0 && d.severity.is_finite()) {
                return bad(format!("domain '{}' has invalid severity {}", d.name, d.severity));
            }
            if d.name.is_empty() || d.name.contains('+') {
                return bad(format!("invalid domain name '{}'", d.name));
            }
            if self.domains[..i].iter().any(|o| o.name == d.name) {
                return bad(format!("duplicate domain '{}'", d.name));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| SyntheticError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

fn unit_vector(rng: &mut EngineRng, d: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.dot(&v).sqrt();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Two orthonormal vectors spanning the rotation plane (the second is zero in
/// one dimension).
fn rotation_plane(rng: &mut EngineRng, d: usize) -> (Array1<f64>, Array1<f64>) {
    let u = unit_vector(rng, d);
    if d == 1 {
        return (u, Array1::zeros(1));
    }
    loop {
        let w = unit_vector(rng, d);
        let v = &w - &(&u * u.dot(&w));
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            return (u, v / n);
        }
    }
}

pub fn gen_pack(spec: &SyntheticSpec) -> Result<FeaturePack> {
    spec.validate()?;
    let (c, d, n) = (spec.num_classes, spec.dim, spec.samples_per_domain);
    let mut rng = rng_from_seed(sub_seed(spec.seed, "class_means"));
    let means: Vec<Array1<f64>> = (0..c).map(|_| unit_vector(&mut rng, d) * spec.class_separation).collect();
    let direction = unit_vector(&mut rng_from_seed(sub_seed(spec.seed, "translation")), d);
    let (pu, pv) = rotation_plane(&mut rng_from_seed(sub_seed(spec.seed, "rotation_plane")), d);

    let total = n * spec.domains.len();
    let mut base = Array2::<f64>::zeros((total, d));
    let mut labels = Vec::with_capacity(total);
    let mut domain_ids = Vec::with_capacity(total);
    for (k, dom) in spec.domains.iter().enumerate() {
        let mut rng = rng_from_seed(sub_seed_indexed(spec.seed, "domain", k as u64));
        for j in 0..n {
            let y = j % c;
            let mut x = &means[y] + &(0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Array1<f64>>();
            let s = dom.severity;
            match dom.shift {
                ShiftKind::Translation => x.scaled_add(s, &direction),
                ShiftKind::Noise => {
                    for v in x.iter_mut() {
                        *v += s * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                ShiftKind::Rotation => {
                    let (a, b) = (x.dot(&pu), x.dot(&pv));
                    let (sn, cs) = s.sin_cos();
                    x.scaled_add((cs - 1.0) * a - sn * b, &pu);
                    x.scaled_add(sn * a + (cs - 1.0) * b, &pv);
                }
            }
            base.row_mut(k * n + j).assign(&x);
            labels.push(y as u32);
            domain_ids.push(k as u32);
        }
    }

    let mut features = Vec::with_capacity(spec.layers);
    let mut h = base;
    for l in 0..spec.layers {
        if l > 0 {
            let linear = spec.layer_map.linear_part(d, l, spec.seed);
            h = spec.layer_map.forward(h.view(), &linear);
        }
        features.push(h.mapv(|v| v as f32));
    }
    let manifest = PackManifest {
        format_version: FORMAT_VERSION,
        model_name: "synthetic".into(),
        num_layers: spec.layers,
        dims: vec![d; spec.layers],
        domains: spec
            .domains
            .iter()
            .map(|dom| DomainEntry {
                name: dom.name.clone(),
                sample_count: n,
            })
            .collect(),
        num_classes: c,
        class_names: (0..c).map(|i| format!("class{i}")).collect(),
        total_samples: total,
    };
    Ok(FeaturePack::new(manifest, features, labels, domain_ids)?)
}

/// Settings for the nearest-class-centroid accuracy proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsProxy {
    /// Fraction of each target class held out for evaluation.
    pub holdout: f64,
    /// One holdout split per seed; accuracies are averaged over splits.
    pub seeds: Vec<u64>,
}

impl Default for GainsProxy {
    fn default() -> Self {
        Self {
            holdout: 0.3,
            seeds: (0..5).collect(),
        }
    }
}

fn class_sums(x: ArrayView2<'_, f32>, rows: &[usize], labels: &[u32], c: usize) -> (Array2<f64>, Vec<usize>) {
    let mut sums = Array2::zeros((c, x.ncols()));
    let mut counts = vec![0; c];
    for &r in rows {
        let y = labels[r] as usize;
        counts[y] += 1;
        for (s, &v) in sums.row_mut(y).iter_mut().zip(x.row(r)) {
            *s += v as f64;
        }
    }
    (sums, counts)
}

/// Holdout accuracy of the nearest centroid among classes with training data.
fn centroid_accuracy(x: ArrayView2<'_, f32>, labels: &[u32], holdout: &[usize], sums: &Array2<f64>, counts: &[usize]) -> f64 {
    let centroids: Vec<Option<Array1<f64>>> = counts
        .iter()
        .enumerate()
        .map(|(k, &n)| (n > 0).then(|| sums.row(k).mapv(|v| v / n as f64)))
        .collect();
    let correct = holdout
        .iter()
        .filter(|&&r| {
            let row = x.row(r);
            let mut best = (f64::INFINITY, usize::MAX);
            for (k, c) in centroids.iter().enumerate() {
                if let Some(c) = c {
                    let d: f64 = c.iter().zip(row).map(|(a, &b)| (a - b as f64).powi(2)).sum();
                    if d < best.0 {
                        best = (d, k);
                    }
                }
            }
            best.1 == labels[r] as usize
        })
        .count();
    correct as f64 / holdout.len() as f64
}

/// Accuracy with and without each blend, per layer, for a nearest-centroid
/// classifier trained on target-train (plus the blend) and scored on a
/// target holdout.
pub fn proxy_gains(pack: &FeaturePack, target: &str, blends: &[Vec<String>], proxy: &GainsProxy) -> Result<GainsTable> {
    if !(proxy.holdout > 0.0 && proxy.holdout < 1.0) || proxy.seeds.is_empty() {
        return Err(SyntheticError::InvalidSpec("holdout must be in (0, 1) with at least one seed".into()).into());
    }
    let c = pack.num_classes();
    let labels = pack.labels();
    let target_rows = pack.rows_of(target)?;
    let mut by_class = vec![Vec::new(); c];
    for &r in target_rows {
        by_class[labels[r] as usize].push(r);
    }
    if let Some(k) = by_class.iter().position(|v| v.is_empty()) {
        return Err(SyntheticError::EmptyHoldout(k).into());
    }
    let blend_rows = blends
        .iter()
        .map(|b| {
            let names: Vec<&str> = b.iter().map(String::as_str).collect();
            pack.union_rows(&names)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let splits: Vec<(Vec<usize>, Vec<usize>)> = proxy
        .seeds
        .iter()
        .map(|&s| {
            let mut rng = rng_from_seed(sub_seed(s, "holdout"));
            let (mut train, mut hold) = (Vec::new(), Vec::new());
            for rows in &by_class {
                let mut rows = rows.clone();
                rows.shuffle(&mut rng);
                let k = ((proxy.holdout * rows.len() as f64).round() as usize).clamp(1, rows.len());
                hold.extend_from_slice(&rows[..k]);
                train.extend_from_slice(&rows[k..]);
            }
            (train, hold)
        })
        .collect();

    let mut rows = Vec::new();
    for layer in 0..pack.num_layers() {
        let x = pack.layer(layer)?.view();
        let blend_sums: Vec<_> = blend_rows.iter().map(|r| class_sums(x, r, labels, c)).collect();
        let mut acc_empty = 0.0;
        let mut acc_blend = vec![0.0; blends.len()];
        for (train, hold) in &splits {
            let (ts, tc) = class_sums(x, train, labels, c);
            acc_empty += centroid_accuracy(x, labels, hold, &ts, &tc);
            for (b, (bs, bc)) in blend_sums.iter().enumerate() {
                let counts: Vec<usize> = tc.iter().zip(bc).map(|(a, b)| a + b).collect();
                acc_blend[b] += centroid_accuracy(x, labels, hold, &(&ts + bs), &counts);
            }
        }
        let k = splits.len() as f64;
        let acc_empty = acc_empty / k;
        for (b, sources) in blends.iter().enumerate() {
            let a = acc_blend[b] / k;
            rows.push(GainsRow {
                blend_id: blend_id(sources),
                layer,
                acc_blend: a,
                acc_empty,
                delta: a - acc_empty,
            });
        }
    }
    Ok(GainsTable::from_rows(rows)?)
}

/// Axis-aligned grid shared by both histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct HistGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins: usize,
}

impl HistGrid {
    /// Bounding box of all rows of all inputs.
    pub fn covering(inputs: &[ArrayView2<'_, f64>], bins: usize) -> Self {
        let d = inputs[0].ncols();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for x in inputs {
            for row in x.rows() {
                for j in 0..d {
                    lo[j] = lo[j].min(row[j]);
                    hi[j] = hi[j].max(row[j]);
                }
            }
        }
        Self { lo, hi, bins }
    }

    pub fn total_bins(&self) -> usize {
        self.bins.pow(self.lo.len() as u32)
    }

    fn cell(&self, row: ndarray::ArrayView1<'_, f64>) -> usize {
        let mut idx = 0;
        for j in 0..self.lo.len() {
            let width = self.hi[j] - self.lo[j];
            let b = if width > 0.0 {
                (((row[j] - self.lo[j]) / width * self.bins as f64).floor().max(0.0) as usize).min(self.bins - 1)
            } else {
                0
            };
            idx = idx * self.bins + b;
        }
        idx
    }

    fn histogram(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        let mut h = vec![0.0; self.total_bins()];
        for row in x.rows() {
            h[self.cell(row)] += 1.0;
        }
        let n = x.nrows() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }

    /// `0.5 * sum |p - q|` over the grid cells.
    pub fn tv(&self, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
        let (p, q) = (self.histogram(a), self.histogram(b));
        0.5 * p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }
}

/// Histogram total variation between `a` and `b` restricted to `dims`, on a
/// grid with `bins` cells per dimension covering both samples.
pub fn tv_histogram(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bins: usize, dims: &[usize]) -> Result<f64, SyntheticError> {
    if dims.is_empty() || dims.len() > 3 {
        return Err(SyntheticError::HistogramDims(dims.len()));
    }
    if a.ncols() != b.ncols() {
        return Err(SyntheticError::DimensionMismatch(a.ncols(), b.ncols()));
    }
    if a.nrows() == 0 || b.nrows() == 0 || bins == 0 {
        return Err(SyntheticError::EmptyInput);
    }
    if let Some(&j) = dims.iter().find(|&&j| j >= a.ncols()) {
        return Err(SyntheticError::DimensionMismatch(j, a.ncols()));
    }
    let (a, b) = (a.select(Axis(1), dims), b.select(Axis(1), dims));
    let grid = HistGrid::covering(&[a.view(), b.view()], bins);
    Ok(grid.tv(a.view(), b.view()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpiReport {
    /// Histogram TV between the two domains at each layer.
    pub tv: Vec<f64>,
    pub tolerance: f64,
    pub bins_per_dim: usize,
    /// Coordinates histogrammed (after projection when `dim > 3`).
    pub dims: usize,
    pub non_increasing: bool,
}

/// Layer-wise histogram TV between the two domains of `spec`.
///
/// One grid, the bounding box over all layers, is used throughout so that a
/// contraction shows up as merged cells. With more than three dimensions the
/// features are projected on the top three principal axes of the pooled
/// layer-0 features.
pub fn dpi_check(spec: &SyntheticSpec, bins_per_dim: usize) -> Result<DpiReport> {
    if spec.domains.len() != 2 {
        return Err(SyntheticError::InvalidSpec("dpi_check needs exactly 2 domains".into()).into());
    }
    if bins_per_dim == 0 {
        return Err(SyntheticError::EmptyInput.into());
    }
    let pack = gen_pack(spec)?;
    let (na, nb) = (&spec.domains[0].name, &spec.domains[1].name);
    let as_f64 = |name: &str, layer: usize| -> Result<Array2<f64>> { Ok(pack.slice(name, layer)?.features.mapv(|v| v as f64)) };
    let projection: Option<Array2<f64>> = if spec.dim > 3 {
        let pooled = ndarray::concatenate(Axis(0), &[as_f64(na, 0)?.view(), as_f64(nb, 0)?.view()]).expect("same width");
        Some(top_axes(pooled.view(), 3))
    } else {
        None
    };
    let mut per_layer = Vec::with_capacity(spec.layers);
    for l in 0..spec.layers {
        let (mut a, mut b) = (as_f64(na, l)?, as_f64(nb, l)?);
        if let Some(p) = &projection {
            a = a.dot(p);
            b = b.dot(p);
        }
        per_layer.push((a, b));
    }
    let views: Vec<ArrayView2<'_, f64>> = per_layer.iter().flat_map(|(a, b)| [a.view(), b.view()]).collect();
    let grid = HistGrid::covering(&views, bins_per_dim);
    let tv: Vec<f64> = per_layer.iter().map(|(a, b)| grid.tv(a.view(), b.view())).collect();
    let tolerance = 3.0 * (grid.total_bins() as f64 / spec.samples_per_domain as f64).sqrt();
    let non_increasing = tv.windows(2).all(|w| w[1] <= w[0] + tolerance);
    Ok(DpiReport {
        tv,
        tolerance,
        bins_per_dim,
        dims: grid.lo.len(),
        non_increasing,
    })
}

/// `d x k` matrix of the leading principal axes of `x`.
fn top_axes(x: ArrayView2<'_, f64>, k: usize) -> Array2<f64> {
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / n;
    let d = cov.nrows();
    let m = nalgebra::DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    Array2::from_shape_fn((d, k.min(d)), |(i, j)| eig.eigenvectors[(i, order[j])])
}
