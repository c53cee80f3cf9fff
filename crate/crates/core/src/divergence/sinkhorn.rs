//! Entropic optimal transport between uniform empirical measures, solved in
//! the log domain with squared-Euclidean cost.
//!
//! The regularization is annealed geometrically from the squared diameter of
//! the point cloud down to the requested epsilon, one sweep per stage, before
//! iterating to tolerance at the target value. Warm-started potentials make
//! small epsilons tractable without changing the fixed point.

use ndarray::{Array2, ArrayView2};

use super::{check_pair, DivergenceError};

/// Largest cost matrix (entries) the solver will allocate.
pub const MAX_COST_ENTRIES: usize = 1 << 25;
const ANNEAL_FACTOR: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub debiased: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornResult {
    /// `max(raw, 0)`
    pub value: f64,
    pub raw: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtValue {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_cost(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let na: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r)).collect();
    let nb: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut c = a.dot(&b.t());
    for ((i, j), v) in c.indexed_iter_mut() {
        *v = (na[i] + nb[j] - 2.0 * *v).max(0.0);
    }
    c
}

/// `out_i = -eps * logsumexp_j(log_w + (pot_j - cost_ij) / eps)`
fn soft_min(cost: &Array2<f64>, pot: &[f64], log_w: f64, eps: f64, out: &mut [f64], buf: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(cost.rows()) {
        let mut max = f64::NEG_INFINITY;
        for ((t, &p), &c) in buf.iter_mut().zip(pot).zip(row) {
            *t = (p - c) / eps;
            max = max.max(*t);
        }
        let s: f64 = buf.iter().map(|t| (t - max).exp()).sum();
        *o = -eps * (log_w + max + s.ln());
    }
}

/// Entropic transport cost `<a, f> + <b, g>` at the dual optimum.
pub fn sinkhorn_ot(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<OtValue, DivergenceError> {
    check_pair(&a, &b, 1)?;
    if !(epsilon > 0.0) || max_iter == 0 {
        return Err(DivergenceError::InvalidParameter("epsilon > 0 and max_iter >= 1 required".into()));
    }
    let (n, m) = (a.nrows(), b.nrows());
    if n.saturating_mul(m) > MAX_COST_ENTRIES {
        return Err(DivergenceError::TooLarge {
            rows: n,
            cols: m,
            limit: MAX_COST_ENTRIES,
        });
    }
    let cost = sq_cost(a, b);
    let cost_t = cost.t().as_standard_layout().into_owned();
    let (log_a, log_b) = (-(n as f64).ln(), -(m as f64).ln());
    let diam2 = cost.iter().cloned().fold(0.0, f64::max);

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut ft = vec![0.0; n];
    let mut gt = vec![0.0; m];
    let mut buf_m = vec![0.0; m];
    let mut buf_n = vec![0.0; n];

    // Identical inputs get symmetric (averaged) updates, which keep f == g at
    // every step; distinct inputs alternate.
    let symmetric = a == b;
    let mut step = |eps: f64, f: &mut Vec<f64>, g: &mut Vec<f64>| -> f64 {
        soft_min(&cost, g, log_b, eps, &mut ft, &mut buf_m);
        // row-marginal violation of the current (f, g): a_i exp((f_i - ft_i)/eps)
        let err = f.iter().zip(&ft).map(|(o, t)| ((o - t) / eps).exp_m1().abs()).sum::<f64>() / n as f64;
        if symmetric {
            soft_min(&cost_t, f, log_a, eps, &mut gt, &mut buf_n);
            for (x, t) in f.iter_mut().zip(&ft) {
                *x = 0.5 * (*x + t);
            }
            for (x, t) in g.iter_mut().zip(&gt) {
                *x = 0.5 * (*x + t);
            }
        } else {
            f.copy_from_slice(&ft);
            soft_min(&cost_t, f, log_a, eps, g, &mut buf_n);
        }
        err
    };

    let mut eps = diam2.max(epsilon);
    while eps > epsilon {
        step(eps, &mut f, &mut g);
        eps = (eps * ANNEAL_FACTOR).max(epsilon);
    }
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        let err = step(epsilon, &mut f, &mut g);
        iterations = it + 1;
        if err < tol {
            converged = true;
            break;
        }
    }
    // Final full update; the column marginal is then exact and the dual value
    // needs no entropic correction.
    soft_min(&cost, &g, log_b, epsilon, &mut f, &mut buf_m);
    soft_min(&cost_t, &f, log_a, epsilon, &mut g, &mut buf_n);
    let value = f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64;
    Ok(OtValue {
        value,
        iterations,
        converged,
    })
}

/// `OT(A,B) - OT(A,A)/2 - OT(B,B)/2` when debiased, else `OT(A,B)`.
pub fn sinkhorn_divergence(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    opts: &SinkhornOptions,
) -> Result<SinkhornResult, DivergenceError> {
    let ab = sinkhorn_ot(a, b, opts.epsilon, opts.max_iter, opts.tol)?;
    if !opts.debiased {
        return Ok(SinkhornResult {
            value: ab.value.max(0.0),
            raw: ab.value,
            iterations: ab.iterations,
            converged: ab.converged,
        });
    }
    let aa = sinkhorn_ot(a, a, opts.epsilon, opts.max_iter, opts.tol)?;
    let bb = sinkhorn_ot(b, b, opts.epsilon, opts.max_iter, opts.tol)?;
    let raw = ab.value - 0.5 * aa.value - 0.5 * bb.value;
    Ok(SinkhornResult {
        value: raw.max(0.0),
        raw,
        iterations: ab.iterations + aa.iterations + bb.iterations,
        converged: ab.converged && aa.converged && bb.converged,
    })
}
