use ndarray::{Array1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_pair, DivergenceError};
use crate::seed::rng_from_seed;

/// Sliced 2-Wasserstein distance: the average, over random unit directions,
/// of the 1-D W2 distance between the projected samples.
///
/// When the sides differ in size the smaller sorted projection is stretched by
/// repetition (`i -> floor(i * m / n)`).
pub fn swd(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, n_projections: usize, seed: u64) -> Result<f64, DivergenceError> {
    check_pair(&a, &b, 1)?;
    if n_projections == 0 {
        return Err(DivergenceError::InvalidParameter("n_projections must be at least 1".into()));
    }
    let d = a.ncols();
    let mut rng = rng_from_seed(seed);
    let mut total = 0.0;
    for _ in 0..n_projections {
        let dir = loop {
            let v: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.dot(&v).sqrt();
            if norm > 1e-12 {
                break v / norm;
            }
        };
        let mut pa = a.dot(&dir).to_vec();
        let mut pb = b.dot(&dir).to_vec();
        pa.sort_unstable_by(f64::total_cmp);
        pb.sort_unstable_by(f64::total_cmp);
        total += w2_sorted(&pa, &pb);
    }
    Ok(total / n_projections as f64)
}

fn w2_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let (n, m) = (long.len(), short.len());
    let sum: f64 = long
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = short[i * m / n];
            (x - y) * (x - y)
        })
        .sum();
    (sum / n as f64).sqrt()
}
