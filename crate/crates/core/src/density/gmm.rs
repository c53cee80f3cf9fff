//! Gaussian mixtures fitted by EM.
//!
//! The diagonal regularization `reg` is added to every covariance in each
//! M-step. That update is the exact maximizer of the expected complete-data
//! log-likelihood once each component density carries the factor
//! `exp(-reg/2 * tr(inv(cov)))`, so the E-step uses those penalized densities
//! and the recorded objective increases monotonically. The objective is
//! reported as the (regularized) average log-likelihood; the plain average
//! log-likelihood of the final model is reported alongside it.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans_init;
use super::linalg::{cholesky, log_det_from_cholesky, solve_lower_in_place, trace_of_inverse};
use super::{CovarianceKind, DensityError, DEFAULT_MAX_ITER, DEFAULT_REG, DEFAULT_TOL};
use crate::seed::{rng_from_seed, sub_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "lowercase")]
pub enum Covariances {
    /// `K x D` variances.
    Diag(Array2<f64>),
    /// `K x D x D` matrices.
    Full(Array3<f64>),
    /// One shared `D x D` matrix.
    Tied(Array2<f64>),
    /// `K` variances.
    Spherical(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Array2<f64>,
    pub covariances: Covariances,
    pub reg: f64,
}

impl GmmModel {
    pub fn kind(&self) -> CovarianceKind {
        match self.covariances {
            Covariances::Diag(_) => CovarianceKind::Diag,
            Covariances::Full(_) => CovarianceKind::Full,
            Covariances::Tied(_) => CovarianceKind::Tied,
            Covariances::Spherical(_) => CovarianceKind::Spherical,
        }
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Dense covariance matrix of component `k`.
    pub fn covariance_matrix(&self, k: usize) -> Array2<f64> {
        let d = self.dim();
        match &self.covariances {
            Covariances::Diag(v) => Array2::from_diag(&v.row(k)),
            Covariances::Full(c) => c.index_axis(ndarray::Axis(0), k).to_owned(),
            Covariances::Tied(c) => c.clone(),
            Covariances::Spherical(v) => Array2::eye(d) * v[k],
        }
    }

    pub fn evaluator(&self) -> Result<GmmEvaluator, DensityError> {
        GmmEvaluator::new(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Diag { inv_var: Vec<f64>, std: Vec<f64> },
    /// Row-major lower Cholesky factor.
    Chol { l: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Component {
    log_weight: f64,
    mean: Vec<f64>,
    /// `-(D ln 2pi + ln det) / 2`
    log_norm: f64,
    trace_inv: f64,
    factor: Factor,
}

/// Precomputed factorizations for density evaluation and sampling.
#[derive(Debug, Clone)]
pub struct GmmEvaluator {
    dim: usize,
    comps: Vec<Component>,
    diag: Option<DiagMats>,
}

/// Stacked diagonal parameters, so Mahalanobis terms for a batch become two
/// matrix products: `x^2 . iv^T - 2 x . (mu iv)^T + sum(mu^2 iv)`.
#[derive(Debug, Clone)]
struct DiagMats {
    inv_var: Array2<f64>,
    mu_iv: Array2<f64>,
    mu2_iv: Vec<f64>,
}

impl GmmEvaluator {
    fn new(model: &GmmModel) -> Result<Self, DensityError> {
        let d = model.dim();
        let base = d as f64 * (2.0 * PI).ln();
        let diag = |k: usize, var: Vec<f64>| -> Result<Component, DensityError> {
            if var.iter().any(|&v| !(v > 0.0)) {
                return Err(DensityError::NotPositiveDefinite { component: k });
            }
            let log_det: f64 = var.iter().map(|v| v.ln()).sum();
            Ok(Component {
                log_weight: model.weights[k].ln(),
                mean: model.means.row(k).to_vec(),
                log_norm: -0.5 * (base + log_det),
                trace_inv: var.iter().map(|v| 1.0 / v).sum(),
                factor: Factor::Diag {
                    inv_var: var.iter().map(|v| 1.0 / v).collect(),
                    std: var.iter().map(|v| v.sqrt()).collect(),
                },
            })
        };
        let chol = |k: usize, cov: ArrayView2<'_, f64>| -> Result<Component, DensityError> {
            let l = cholesky(cov, k)?;
            Ok(Component {
                log_weight: model.weights[k].ln(),
                mean: model.means.row(k).to_vec(),
                log_norm: -0.5 * (base + log_det_from_cholesky(&l)),
                trace_inv: trace_of_inverse(&l),
                factor: Factor::Chol {
                    l: l.into_raw_vec_and_offset().0,
                },
            })
        };
        let comps = (0..model.n_components())
            .map(|k| match &model.covariances {
                Covariances::Diag(v) => diag(k, v.row(k).to_vec()),
                Covariances::Spherical(v) => diag(k, vec![v[k]; d]),
                Covariances::Full(c) => chol(k, c.index_axis(ndarray::Axis(0), k)),
                Covariances::Tied(c) => chol(k, c.view()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let diag = matches!(model.covariances, Covariances::Diag(_) | Covariances::Spherical(_)).then(|| {
            let k = comps.len();
            let mut inv_var = Array2::zeros((k, d));
            let mut mu_iv = Array2::zeros((k, d));
            let mut mu2_iv = vec![0.0; k];
            for (c, comp) in comps.iter().enumerate() {
                if let Factor::Diag { inv_var: iv, .. } = &comp.factor {
                    for j in 0..d {
                        inv_var[[c, j]] = iv[j];
                        mu_iv[[c, j]] = comp.mean[j] * iv[j];
                        mu2_iv[c] += comp.mean[j] * comp.mean[j] * iv[j];
                    }
                }
            }
            DiagMats { inv_var, mu_iv, mu2_iv }
        });
        Ok(Self { dim: d, comps, diag })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn component_log_pdf(&self, k: usize, x: &[f64], scratch: &mut [f64]) -> f64 {
        let c = &self.comps[k];
        let maha = match &c.factor {
            Factor::Diag { inv_var, .. } => x
                .iter()
                .zip(&c.mean)
                .zip(inv_var)
                .map(|((&xi, &m), &iv)| (xi - m) * (xi - m) * iv)
                .sum::<f64>(),
            Factor::Chol { l } => {
                for ((s, &xi), &m) in scratch.iter_mut().zip(x).zip(&c.mean) {
                    *s = xi - m;
                }
                solve_lower_in_place(l, self.dim, scratch);
                scratch.iter().map(|v| v * v).sum()
            }
        };
        c.log_norm - 0.5 * maha
    }

    /// Mixture log-density at `x`, via log-sum-exp.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.dim];
        self.log_pdf_with(x, &mut scratch)
    }

    fn log_pdf_with(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let mut terms = [0.0f64; 64];
        let mut heap;
        let buf: &mut [f64] = if self.comps.len() <= terms.len() {
            &mut terms[..self.comps.len()]
        } else {
            heap = vec![0.0; self.comps.len()];
            &mut heap
        };
        for (k, t) in buf.iter_mut().enumerate() {
            *t = self.comps[k].log_weight + self.component_log_pdf(k, x, scratch);
        }
        log_sum_exp(buf)
    }

    /// `N x K` matrix of `offsets[k] + log N(x_i; mu_k, cov_k)`.
    fn log_joint(&self, x: ArrayView2<'_, f64>, offsets: &[f64]) -> Array2<f64> {
        let n = x.nrows();
        let k = self.comps.len();
        match &self.diag {
            Some(dm) => {
                let mut out = x.mapv(|v| v * v).dot(&dm.inv_var.t());
                ndarray::linalg::general_mat_mul(-2.0, &x, &dm.mu_iv.t(), 1.0, &mut out);
                for mut row in out.rows_mut() {
                    for c in 0..k {
                        let maha = (row[c] + dm.mu2_iv[c]).max(0.0);
                        row[c] = offsets[c] + self.comps[c].log_norm - 0.5 * maha;
                    }
                }
                out
            }
            None => {
                let mut out = Array2::zeros((n, k));
                let mut scratch = vec![0.0; self.dim];
                let mut xi = vec![0.0; self.dim];
                for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                    for (dst, &v) in xi.iter_mut().zip(x.row(i)) {
                        *dst = v;
                    }
                    for c in 0..k {
                        row[c] = offsets[c] + self.component_log_pdf(c, &xi, &mut scratch);
                    }
                }
                out
            }
        }
    }

    /// Log-density of every row of `x`.
    pub fn log_pdf_rows(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>, DensityError> {
        if x.ncols() != self.dim {
            return Err(DensityError::DimensionMismatch {
                expected: self.dim,
                got: x.ncols(),
            });
        }
        let offsets: Vec<f64> = self.comps.iter().map(|c| c.log_weight).collect();
        let mut out = Vec::with_capacity(x.nrows());
        for chunk in x.axis_chunks_iter(ndarray::Axis(0), CHUNK_ROWS) {
            let joint = self.log_joint(chunk, &offsets);
            out.extend(joint.rows().into_iter().map(|r| log_sum_exp(r.as_slice().expect("contiguous"))));
        }
        Ok(out)
    }

    /// `m` draws: pick a component by weight, then a Gaussian draw from it.
    pub fn sample(&self, m: usize, seed: u64) -> Array2<f64> {
        let d = self.dim;
        let mut rng = rng_from_seed(seed);
        let weights: Vec<f64> = self.comps.iter().map(|c| c.log_weight.exp()).collect();
        let pick = WeightedIndex::new(&weights).expect("weights form a simplex");
        let mut out = Array2::zeros((m, d));
        let mut z = vec![0.0; d];
        for mut row in out.rows_mut() {
            let c = &self.comps[pick.sample(&mut rng)];
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            match &c.factor {
                Factor::Diag { std, .. } => {
                    for j in 0..d {
                        row[j] = c.mean[j] + std[j] * z[j];
                    }
                }
                Factor::Chol { l } => {
                    for j in 0..d {
                        let lz: f64 = l[j * d..j * d + j + 1].iter().zip(&z[..=j]).map(|(a, b)| a * b).sum();
                        row[j] = c.mean[j] + lz;
                    }
                }
            }
        }
        out
    }
}

const CHUNK_ROWS: usize = 8192;

#[inline]
fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub fn gmm_logpdf(model: &GmmModel, x: &[f64]) -> Result<f64, DensityError> {
    if x.len() != model.dim() {
        return Err(DensityError::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    Ok(model.evaluator()?.log_pdf(x))
}

pub fn gmm_sample(model: &GmmModel, m: usize, seed: u64) -> Result<Array2<f64>, DensityError> {
    Ok(model.evaluator()?.sample(m, seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub n_components: usize,
    pub kind: CovarianceKind,
    pub reg: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl GmmOptions {
    pub fn new(n_components: usize, kind: CovarianceKind, seed: u64) -> Self {
        Self {
            n_components,
            kind,
            reg: DEFAULT_REG,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Regularized average log-likelihood after each E-step.
    pub trace: Vec<f64>,
    /// Plain average log-likelihood of the returned model.
    pub avg_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fit a mixture by EM, initialized from a single k-means run.
pub fn fit_gmm(x: ArrayView2<'_, f64>, opts: &GmmOptions) -> Result<GmmFit, DensityError> {
    let (n, d) = x.dim();
    let k = opts.n_components;
    if k == 0 {
        return Err(DensityError::ZeroComponents);
    }
    if n == 0 || d == 0 {
        return Err(DensityError::EmptyInput);
    }
    if n < k {
        return Err(DensityError::TooFewRows { rows: n, k });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DensityError::NonFinite);
    }
    let x = x.as_standard_layout();

    let km = kmeans_init(x.view(), k, sub_seed(opts.seed, "kmeans"))?;
    let mut resp = Array2::<f64>::zeros((n, k));
    for (i, &c) in km.labels.iter().enumerate() {
        resp[[i, c]] = 1.0;
    }
    // [x^2 | x], shared by the diagonal E and M steps
    let stacked = matches!(opts.kind, CovarianceKind::Diag | CovarianceKind::Spherical).then(|| {
        let mut xx = Array2::<f64>::zeros((n, 2 * d));
        xx.slice_mut(ndarray::s![.., ..d]).assign(&x.mapv(|v| v * v));
        xx.slice_mut(ndarray::s![.., d..]).assign(&x);
        xx
    });
    let m_step_any = |resp: &Array2<f64>, prev: Option<&GmmModel>| match &stacked {
        Some(xx) => m_step_diag(xx.view(), resp, opts.kind, opts.reg, prev),
        None => m_step(x.view(), resp, opts.kind, opts.reg, prev),
    };
    let mut model = m_step_any(&resp, None);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut prev = f64::NEG_INFINITY;
    loop {
        let eval = model.evaluator()?;
        let obj = match (&stacked, &eval.diag) {
            (Some(xx), Some(dm)) => e_step_diag(&eval, dm, xx.view(), opts.reg, &mut resp),
            _ => e_step(&eval, x.view(), opts.reg, &mut resp),
        };
        trace.push(obj);
        if (obj - prev).abs() < opts.tol {
            converged = true;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        prev = obj;
        model = m_step_any(&resp, Some(&model));
        iterations += 1;
    }

    let avg_loglik = model.evaluator()?.log_pdf_rows(x.view())?.iter().sum::<f64>() / n as f64;
    Ok(GmmFit {
        model,
        trace,
        avg_loglik,
        iterations,
        converged,
    })
}

/// Overwrite `resp` with responsibilities and return the regularized average
/// log-likelihood.
fn e_step(eval: &GmmEvaluator, x: ArrayView2<'_, f64>, reg: f64, resp: &mut Array2<f64>) -> f64 {
    let offsets: Vec<f64> = eval
        .comps
        .iter()
        .map(|c| c.log_weight - 0.5 * reg * c.trace_inv)
        .collect();
    let mut total = 0.0;
    let mut start = 0;
    for chunk in x.axis_chunks_iter(ndarray::Axis(0), CHUNK_ROWS) {
        let mut joint = eval.log_joint(chunk, &offsets);
        for mut row in joint.rows_mut() {
            total += normalize_row(row.as_slice_mut().expect("contiguous"));
        }
        resp.slice_mut(ndarray::s![start..start + chunk.nrows(), ..]).assign(&joint);
        start += chunk.nrows();
    }
    total / x.nrows() as f64
}

/// Turn a row of log-joint terms into responsibilities in place; returns the
/// row's log-sum-exp.
#[inline]
fn normalize_row(r: &mut [f64]) -> f64 {
    let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut sum = 0.0;
    for v in r.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in r.iter_mut() {
        *v *= inv;
    }
    max + sum.ln()
}

/// E-step for diagonal and spherical models on stacked `[x^2 | x]` rows.
fn e_step_diag(eval: &GmmEvaluator, dm: &DiagMats, xx: ArrayView2<'_, f64>, reg: f64, resp: &mut Array2<f64>) -> f64 {
    let (k, d) = dm.inv_var.dim();
    let mut w = Array2::<f64>::zeros((k, 2 * d));
    w.slice_mut(ndarray::s![.., ..d]).assign(&dm.inv_var);
    w.slice_mut(ndarray::s![.., d..]).assign(&(&dm.mu_iv * -2.0));
    let consts: Vec<f64> = eval
        .comps
        .iter()
        .map(|c| c.log_weight - 0.5 * reg * c.trace_inv + c.log_norm)
        .collect();
    ndarray::linalg::general_mat_mul(1.0, &xx, &w.t(), 0.0, resp);
    let mut total = 0.0;
    for mut row in resp.rows_mut() {
        let r = row.as_slice_mut().expect("contiguous");
        for (c, v) in r.iter_mut().enumerate() {
            let maha = (*v + dm.mu2_iv[c]).max(0.0);
            *v = consts[c] - 0.5 * maha;
        }
        total += normalize_row(r);
    }
    total / xx.nrows() as f64
}

/// M-step for diagonal and spherical models on stacked `[x^2 | x]` rows.
fn m_step_diag(
    xx: ArrayView2<'_, f64>,
    resp: &Array2<f64>,
    kind: CovarianceKind,
    reg: f64,
    prev: Option<&GmmModel>,
) -> GmmModel {
    let n = xx.nrows();
    let d = xx.ncols() / 2;
    let k = resp.ncols();
    let nk = resp.sum_axis(ndarray::Axis(0));
    let sums = resp.t().dot(&xx);
    let empty: Vec<bool> = nk.iter().map(|&v| v < f64::MIN_POSITIVE).collect();
    let mut means = Array2::<f64>::zeros((k, d));
    let mut var = Array2::<f64>::zeros((k, d));
    for c in 0..k {
        if empty[c] {
            if let Some(p) = prev {
                means.row_mut(c).assign(&p.means.row(c));
            }
            continue;
        }
        for j in 0..d {
            let m = sums[[c, d + j]] / nk[c];
            means[[c, j]] = m;
            var[[c, j]] = (sums[[c, j]] / nk[c] - m * m).max(0.0);
        }
    }
    let weights: Vec<f64> = nk.iter().map(|v| v / n as f64).collect();
    let covariances = if kind == CovarianceKind::Diag {
        for c in 0..k {
            if empty[c] {
                match prev.map(|p| &p.covariances) {
                    Some(Covariances::Diag(v)) => var.row_mut(c).assign(&v.row(c)),
                    _ => var.row_mut(c).fill(1.0),
                }
            } else {
                var.row_mut(c).mapv_inplace(|s| s + reg);
            }
        }
        Covariances::Diag(var)
    } else {
        Covariances::Spherical(
            (0..k)
                .map(|c| {
                    if empty[c] {
                        match prev.map(|p| &p.covariances) {
                            Some(Covariances::Spherical(v)) => v[c],
                            _ => 1.0,
                        }
                    } else {
                        var.row(c).mean().expect("d >= 1") + reg
                    }
                })
                .collect(),
        )
    };
    GmmModel {
        weights,
        means,
        covariances,
        reg,
    }
}

/// M-step for full and tied models.
fn m_step(
    x: ArrayView2<'_, f64>,
    resp: &Array2<f64>,
    kind: CovarianceKind,
    reg: f64,
    prev: Option<&GmmModel>,
) -> GmmModel {
    let (n, d) = x.dim();
    let k = resp.ncols();
    let nk = resp.sum_axis(ndarray::Axis(0));
    let mut means = resp.t().dot(&x);
    // Components with no mass keep their previous parameters at zero weight.
    let empty: Vec<bool> = nk.iter().map(|&v| v < f64::MIN_POSITIVE).collect();
    for c in 0..k {
        if empty[c] {
            match prev {
                Some(p) => means.row_mut(c).assign(&p.means.row(c)),
                None => means.row_mut(c).fill(0.0),
            }
        } else {
            means.row_mut(c).mapv_inplace(|v| v / nk[c]);
        }
    }
    let weights: Vec<f64> = nk.iter().map(|v| v / n as f64).collect();

    let covariances = match kind {
        CovarianceKind::Diag | CovarianceKind::Spherical => unreachable!("diagonal kinds use m_step_diag"),
        CovarianceKind::Full | CovarianceKind::Tied => {
            let mut scatter = Array3::<f64>::zeros((k, d, d));
            for c in 0..k {
                // weighted centered rows: sqrt(r) (x - mu)
                let mut centered = x.to_owned();
                for (i, mut row) in centered.rows_mut().into_iter().enumerate() {
                    let w = resp[[i, c]].sqrt();
                    for (v, &m) in row.iter_mut().zip(means.row(c)) {
                        *v = w * (*v - m);
                    }
                }
                let s = centered.t().dot(&centered);
                let mut dst = scatter.index_axis_mut(ndarray::Axis(0), c);
                for a in 0..d {
                    for b in 0..d {
                        // exact symmetry
                        dst[[a, b]] = if b <= a { s[[a, b]] } else { s[[b, a]] };
                    }
                }
            }
            if kind == CovarianceKind::Full {
                for c in 0..k {
                    let mut s = scatter.index_axis_mut(ndarray::Axis(0), c);
                    if empty[c] {
                        match prev.map(|p| &p.covariances) {
                            Some(Covariances::Full(p)) => s.assign(&p.index_axis(ndarray::Axis(0), c)),
                            _ => s.assign(&Array2::eye(d)),
                        }
                    } else {
                        s.mapv_inplace(|v| v / nk[c]);
                        for a in 0..d {
                            s[[a, a]] += reg;
                        }
                    }
                }
                Covariances::Full(scatter)
            } else {
                let mut pooled = scatter.sum_axis(ndarray::Axis(0)) / n as f64;
                for a in 0..d {
                    pooled[[a, a]] += reg;
                }
                Covariances::Tied(pooled)
            }
        }
    };
    GmmModel {
        weights,
        means,
        covariances,
        reg,
    }
}
