use crate::density::{GmmEvaluator, GmmModel};
use crate::seed::sub_seed;

use super::{DivergenceAlgo, DivergenceError, DivergenceResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimate of `KL(P || Q)` from `m` draws of `P`.
pub fn kl_mc(p: &GmmModel, q: &GmmModel, m: usize, seed: u64) -> Result<KlEstimate, DivergenceError> {
    kl_mc_eval(&p.evaluator()?, &q.evaluator()?, m, seed)
}

pub fn kl_mc_eval(p: &GmmEvaluator, q: &GmmEvaluator, m: usize, seed: u64) -> Result<KlEstimate, DivergenceError> {
    if p.dim() != q.dim() {
        return Err(DivergenceError::DimensionMismatch(p.dim(), q.dim()));
    }
    if m == 0 {
        return Err(DivergenceError::InvalidParameter("mc_samples must be at least 1".into()));
    }
    let x = p.sample(m, seed);
    let lp = p.log_pdf_rows(x.view())?;
    let lq = q.log_pdf_rows(x.view())?;
    let diffs: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / m as f64;
    let std_error = if m > 1 {
        let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        (var / m as f64).sqrt()
    } else {
        0.0
    };
    Ok(KlEstimate { value: mean, std_error })
}

/// `nA/(nA+nB) KL(P||Q) + nB/(nA+nB) KL(Q||P)`.
pub fn sym_weighted_kl(
    p: &GmmModel,
    q: &GmmModel,
    n_a: usize,
    n_b: usize,
    m: usize,
    seed: u64,
) -> Result<DivergenceResult, DivergenceError> {
    sym_weighted_kl_eval(&p.evaluator()?, &q.evaluator()?, n_a, n_b, m, seed)
}

pub fn sym_weighted_kl_eval(
    p: &GmmEvaluator,
    q: &GmmEvaluator,
    n_a: usize,
    n_b: usize,
    m: usize,
    seed: u64,
) -> Result<DivergenceResult, DivergenceError> {
    if n_a == 0 || n_b == 0 {
        return Err(DivergenceError::InvalidParameter("domain sizes must be at least 1".into()));
    }
    let total = (n_a + n_b) as f64;
    let (wa, wb) = (n_a as f64 / total, n_b as f64 / total);
    let pq = kl_mc_eval(p, q, m, sub_seed(seed, "kl_pq"))?;
    let qp = kl_mc_eval(q, p, m, sub_seed(seed, "kl_qp"))?;
    let value = wa * pq.value + wb * qp.value;
    Ok(DivergenceResult {
        value,
        raw_value: value,
        algo: DivergenceAlgo::GmmKl { mc_samples: m },
        mc_std_error: Some((wa * wa * pq.std_error.powi(2) + wb * wb * qp.std_error.powi(2)).sqrt()),
        kl_directions: Some([pq.value, qp.value]),
        seed,
        converged: true,
    })
}
