use ndarray::{ArrayView2, Axis};

use super::{check_pair, Bandwidth, DivergenceError};

/// Pooled points used for the median heuristic; larger sets are thinned with
/// a fixed stride.
pub const MEDIAN_SUBSAMPLE: usize = 1024;
const BLOCK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdEstimate {
    /// `max(raw, 0)`
    pub value: f64,
    pub raw: f64,
    pub bandwidth: f64,
}

/// Median pairwise Euclidean distance over the pooled rows of `a` and `b`.
/// Falls back to 1 when the median is zero.
pub fn median_heuristic(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let total = a.nrows() + b.nrows();
    let stride = total.div_ceil(MEDIAN_SUBSAMPLE).max(1);
    let row = |i: usize| if i < a.nrows() { a.row(i) } else { b.row(i - a.nrows()) };
    let picked: Vec<usize> = (0..total).step_by(stride).collect();
    let mut dists = Vec::with_capacity(picked.len() * picked.len().saturating_sub(1) / 2);
    for (x, &i) in picked.iter().enumerate() {
        for &j in &picked[x + 1..] {
            let d2: f64 = row(i).iter().zip(row(j)).map(|(u, v)| (u - v) * (u - v)).sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, &mut upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let med = if dists.len() % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Sum of `exp(-gamma |x_i - y_j|^2)` over all pairs, or over `i != j` when
/// `x` and `y` are the same set.
fn kernel_sum(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, gamma: f64, same: bool) -> f64 {
    let nx: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
    let ny: Vec<f64> = y.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut total = 0.0;
    for (bi, xb) in x.axis_chunks_iter(Axis(0), BLOCK).enumerate() {
        for (bj, yb) in y.axis_chunks_iter(Axis(0), BLOCK).enumerate() {
            if same && bj < bi {
                continue;
            }
            let g = xb.dot(&yb.t());
            let mut block = 0.0;
            for ((i, j), &v) in g.indexed_iter() {
                let (gi, gj) = (bi * BLOCK + i, bj * BLOCK + j);
                if same && gj <= gi {
                    continue;
                }
                let d2 = (nx[gi] + ny[gj] - 2.0 * v).max(0.0);
                block += (-gamma * d2).exp();
            }
            total += block;
        }
    }
    if same {
        2.0 * total
    } else {
        total
    }
}

fn sigma_for(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bandwidth: Bandwidth) -> f64 {
    match bandwidth {
        Bandwidth::Median => median_heuristic(a, b),
        Bandwidth::Fixed(s) => s,
    }
}

/// Unbiased MMD^2 with a Gaussian kernel `exp(-|u-v|^2 / (2 sigma^2))`.
pub fn mmd_gaussian(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bandwidth: Bandwidth) -> Result<MmdEstimate, DivergenceError> {
    check_pair(&a, &b, 2)?;
    let sigma = sigma_for(a, b, bandwidth);
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let (n, m) = (a.nrows() as f64, b.nrows() as f64);
    let kaa = kernel_sum(a, a, gamma, true) / (n * (n - 1.0));
    let kbb = kernel_sum(b, b, gamma, true) / (m * (m - 1.0));
    let kab = kernel_sum(a, b, gamma, false) / (n * m);
    let raw = kaa + kbb - 2.0 * kab;
    Ok(MmdEstimate {
        value: raw.max(0.0),
        raw,
        bandwidth: sigma,
    })
}

/// Biased (V-statistic) MMD^2 at a fixed bandwidth.
pub fn mmd_gaussian_biased(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, sigma: f64) -> Result<f64, DivergenceError> {
    check_pair(&a, &b, 1)?;
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let (n, m) = (a.nrows() as f64, b.nrows() as f64);
    let kaa = (kernel_sum(a, a, gamma, true) + n) / (n * n);
    let kbb = (kernel_sum(b, b, gamma, true) + m) / (m * m);
    let kab = kernel_sum(a, b, gamma, false) / (n * m);
    Ok(kaa + kbb - 2.0 * kab)
}
