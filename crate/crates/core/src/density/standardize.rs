use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub const STD_FLOOR: f64 = 1e-8;

/// Column-wise location and scale of a descriptor space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Which descriptor space the statistics belong to.
    pub source: String,
}

/// Streaming (Welford) accumulator for column means and variances.
#[derive(Debug, Clone)]
pub struct StandardizeAccumulator {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StandardizeAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(row) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn push_rows(&mut self, x: ArrayView2<'_, f64>) {
        for row in x.rows() {
            match row.as_slice() {
                Some(s) => self.push(s),
                None => self.push(&row.to_vec()),
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Population statistics; `None` when nothing was pushed.
    pub fn finish(&self, source: impl Into<String>) -> Option<StandardizeStats> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        Some(StandardizeStats {
            mean: self.mean.clone(),
            std: self.m2.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect(),
            source: source.into(),
        })
    }
}

/// Fit column statistics. Returns `None` for an empty matrix.
pub fn fit_standardizer(x: ArrayView2<'_, f64>, source: impl Into<String>) -> Option<StandardizeStats> {
    let mut acc = StandardizeAccumulator::new(x.ncols());
    acc.push_rows(x);
    acc.finish(source)
}

pub fn apply_standardizer(stats: &StandardizeStats, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s;
        }
    }
    out
}
