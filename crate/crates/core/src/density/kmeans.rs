use ndarray::{Array2, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::DensityError;
use crate::seed::{rng_from_seed, sub_seed_indexed};

pub const KMEANS_MAX_ITER: usize = 100;
/// Relative center-shift tolerance for Lloyd iterations.
pub const KMEANS_TOL: f64 = 1e-4;
/// Independent k-means++ restarts; the lowest inertia wins.
pub const KMEANS_N_INIT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Array2<f64>,
    pub labels: Vec<usize>,
    pub iterations: usize,
    /// Sum of squared distances to the assigned centers.
    pub inertia: f64,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_variance(x: ArrayView2<'_, f64>) -> f64 {
    let n = x.nrows() as f64;
    x.columns()
        .into_iter()
        .map(|c| {
            let m = c.sum() / n;
            c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
        })
        .sum::<f64>()
        / x.ncols() as f64
}

/// Best of [`KMEANS_N_INIT`] runs of k-means++ seeding plus Lloyd iterations.
pub fn kmeans_init(x: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KMeans, DensityError> {
    if k == 0 {
        return Err(DensityError::ZeroComponents);
    }
    if x.nrows() < k {
        return Err(DensityError::TooFewRows { rows: x.nrows(), k });
    }
    let x = x.as_standard_layout();
    let mut best: Option<KMeans> = None;
    for run in 0..KMEANS_N_INIT {
        let km = kmeans_run(x.view(), k, sub_seed_indexed(seed, "kmeans_run", run as u64));
        if best.as_ref().is_none_or(|b| km.inertia < b.inertia) {
            best = Some(km);
        }
    }
    Ok(best.expect("at least one run"))
}

fn kmeans_run(x: ArrayView2<'_, f64>, k: usize, seed: u64) -> KMeans {
    let (n, dim) = x.dim();
    let data = x.as_slice().expect("contiguous");
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = rng_from_seed(seed);

    let mut centers = Array2::<f64>::zeros((k, dim));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&ndarray::ArrayView1::from(row(first)));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&closest) {
            Ok(dist) => dist.sample(&mut rng),
            // every point coincides with a chosen center
            Err(_) => rng.random_range(0..n),
        };
        centers.row_mut(c).assign(&ndarray::ArrayView1::from(row(pick)));
        for (i, d) in closest.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), row(pick)));
        }
    }

    // Lloyd stops once the squared center shift falls below this fraction of
    // the mean per-feature variance.
    let tol = KMEANS_TOL * mean_variance(x.view());
    let sq_norms: Vec<f64> = (0..n).map(|i| row(i).iter().map(|v| v * v).sum()).collect();
    let mut labels = vec![usize::MAX; n];
    let mut dist_to_own = vec![0.0; n];
    let mut cross = Array2::<f64>::zeros((n, k));
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        // |x - c|^2 = |x|^2 - 2 x.c + |c|^2
        ndarray::linalg::general_mat_mul(-2.0, &x, &centers.t(), 0.0, &mut cross);
        let c_norms: Vec<f64> = centers.rows().into_iter().map(|r| r.dot(&r)).collect();
        let mut changed = false;
        for (i, dots) in cross.rows().into_iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, (&dot, &cn)) in dots.iter().zip(&c_norms).enumerate() {
                let d = dot + cn;
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
            dist_to_own[i] = (best_d + sq_norms[i]).max(0.0);
        }
        if !changed && iterations > 1 {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        let mut shift = 0.0;
        for c in 0..k {
            let new: Vec<f64> = if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                sums[c * dim..(c + 1) * dim].iter().map(|s| s * inv).collect()
            } else {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| dist_to_own[a].total_cmp(&dist_to_own[b]).then(b.cmp(&a)))
                    .expect("n >= k >= 1");
                dist_to_own[far] = 0.0;
                row(far).to_vec()
            };
            for (dst, v) in centers.row_mut(c).iter_mut().zip(new) {
                shift += (*dst - v) * (*dst - v);
                *dst = v;
            }
        }
        if shift <= tol {
            break;
        }
    }

    // exact inertia for the final centers
    let inertia = (0..n).map(|i| sq_dist(row(i), centers.row(labels[i]).as_slice().expect("standard layout"))).sum();
    KMeans {
        centers,
        labels,
        iterations,
        inertia,
    }
}
