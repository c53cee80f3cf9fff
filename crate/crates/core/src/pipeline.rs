//! End-to-end scores for a (target, blend, center layer) triple.
//!
//! 1. within pairs inside the target and cross pairs from the target into the
//!    blend, both stratified by class;
//! 2. trajectory descriptors around the center layer, optionally reduced to
//!    the angle or distance columns;
//! 3. standardization fitted on uniform pairs pooled over target and blend;
//! 4. the configured divergence between the two descriptor distributions.
//!
//! Within descriptors do not depend on the blend and are cached per
//! (target, layer) in raw form.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use log::warn;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::config::RadarConfig;
use crate::density::{apply_standardizer, components_for_classes, fit_gmm, fit_standardizer, GmmFit, GmmOptions};
use crate::divergence::{mmd_gaussian, sinkhorn_divergence, swd, sym_weighted_kl_eval, DivergenceAlgo, SinkhornOptions};
use crate::error::{RadarError, Result};
use crate::feature_pack::FeaturePack;
use crate::geometry::descriptor_batch;
use crate::sampling::{sample_pairs, uniform_pool_pairs, PairKind, PairRequest};
use crate::seed::{sub_seed, sub_seed_indexed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub within_rows: usize,
    pub cross_rows: usize,
    pub descriptor_dim: usize,
    /// Mixture components used (0 for sample-based algorithms).
    pub components: usize,
    /// Average log-likelihood of the within (P) and cross (Q) fits.
    pub loglik_p: Option<f64>,
    pub loglik_q: Option<f64>,
    pub mc_std_error: Option<f64>,
    /// Unweighted `KL(P||Q)` and `KL(Q||P)` for the KL algorithm.
    pub kl_directions: Option<[f64; 2]>,
    /// Divergence before clamping.
    pub raw_value: f64,
    pub converged: bool,
    /// Whether within descriptors came from the per-target cache.
    pub within_cached: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarScore {
    pub value: f64,
    pub target: String,
    pub blend: Vec<String>,
    pub center_layer: usize,
    pub config_digest: String,
    pub diagnostics: Diagnostics,
}

/// Canonical blend identifier: sorted member names joined with `+`.
pub fn blend_id<S: AsRef<str>>(sources: &[S]) -> String {
    let mut names: Vec<&str> = sources.iter().map(|s| s.as_ref()).collect();
    names.sort_unstable();
    names.join("+")
}

struct WithinEntry {
    descriptors: Array2<f64>,
    warnings: Vec<String>,
}

/// Scores against one pack under one configuration.
pub struct RadarEngine<'p> {
    pack: &'p FeaturePack,
    config: RadarConfig,
    digest: String,
    within: Mutex<HashMap<(String, usize), Arc<WithinEntry>>>,
}

impl<'p> RadarEngine<'p> {
    pub fn new(pack: &'p FeaturePack, config: RadarConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            pack,
            digest: config.digest(),
            config,
            within: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &RadarConfig {
        &self.config
    }

    pub fn pack(&self) -> &FeaturePack {
        self.pack
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    fn layer_seed(&self, layer: usize) -> u64 {
        sub_seed_indexed(self.config.seed, "layer", layer as u64)
    }

    fn check_request(&self, target: &str, blend: &[&str], layer: usize) -> Result<()> {
        self.pack.domain_index(target)?;
        if blend.is_empty() {
            return Err(RadarError::Request("blend is empty".into()));
        }
        for b in blend {
            self.pack.domain_index(b)?;
            if *b == target {
                return Err(RadarError::Request(format!("target '{target}' is part of the blend")));
            }
        }
        if layer >= self.pack.num_layers() {
            return Err(RadarError::Request(format!(
                "center layer {layer} out of range (pack has {} layers)",
                self.pack.num_layers()
            )));
        }
        Ok(())
    }

    fn descriptors(&self, pairs: &[(usize, usize)], layer: usize) -> Result<Array2<f64>> {
        Ok(descriptor_batch(self.pack, pairs, layer, self.config.ell, self.config.space)?)
    }

    fn within_entry(&self, target: &str, layer: usize) -> Result<(Arc<WithinEntry>, bool)> {
        let key = (target.to_string(), layer);
        if let Some(e) = self.within.lock().expect("cache lock").get(&key) {
            return Ok((Arc::clone(e), true));
        }
        let set = sample_pairs(
            self.pack,
            &PairRequest {
                kind: PairKind::Within,
                target,
                blend: &[],
                n: self.config.n_pairs,
                strategy: self.config.strategy,
                seed: sub_seed(self.layer_seed(layer), "within"),
                weight_layer: layer,
            },
        )?;
        let entry = Arc::new(WithinEntry {
            descriptors: self.descriptors(&set.pairs, layer)?,
            warnings: set.warnings,
        });
        self.within
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&entry));
        Ok((entry, false))
    }

    /// Keep the angle or distance columns only, per the config.
    fn select_columns(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (angle, dist) = (self.config.use_angle, self.config.use_distance);
        if angle && dist {
            return x.to_owned();
        }
        let offset = if angle { 0 } else { 1 };
        let cols: Vec<usize> = (offset..x.ncols()).step_by(2).collect();
        x.select(Axis(1), &cols)
    }

    /// Score of `blend` against `target` at one center layer.
    pub fn radar_score(&self, target: &str, blend: &[&str], layer: usize) -> Result<RadarScore> {
        self.check_request(target, blend, layer)?;
        let cfg = &self.config;
        let seed = self.layer_seed(layer);
        let mut warnings = Vec::new();

        let (within, within_cached) = self.within_entry(target, layer)?;
        warnings.extend(within.warnings.iter().cloned());
        let cross_set = sample_pairs(
            self.pack,
            &PairRequest {
                kind: PairKind::Cross,
                target,
                blend,
                n: cfg.n_pairs,
                strategy: cfg.strategy,
                seed: sub_seed(seed, "cross"),
                weight_layer: layer,
            },
        )?;
        warnings.extend(cross_set.warnings.iter().cloned());

        let mut p = self.select_columns(within.descriptors.view());
        let mut q = self.select_columns(self.descriptors(&cross_set.pairs, layer)?.view());

        if cfg.standardize {
            let mut pool: Vec<usize> = self.pack.rows_of(target)?.to_vec();
            pool.extend(self.pack.union_rows(blend)?);
            let base_pairs = uniform_pool_pairs(&pool, cfg.baseline_pairs, sub_seed(seed, "baseline"));
            let base = self.select_columns(self.descriptors(&base_pairs, layer)?.view());
            let stats = fit_standardizer(base.view(), format!("{target}|{}|layer{layer}", blend_id(blend)))
                .ok_or_else(|| RadarError::Request("no baseline pairs to standardize with".into()))?;
            p = apply_standardizer(&stats, p.view());
            q = apply_standardizer(&stats, q.view());
        }

        let n_target = self.pack.rows_of(target)?.len();
        let n_blend = self.pack.union_rows(blend)?.len();
        let mut diag = Diagnostics {
            within_rows: p.nrows(),
            cross_rows: q.nrows(),
            descriptor_dim: p.ncols(),
            components: 0,
            loglik_p: None,
            loglik_q: None,
            mc_std_error: None,
            kl_directions: None,
            raw_value: 0.0,
            converged: true,
            within_cached,
            warnings: Vec::new(),
        };

        let value = match cfg.algorithm {
            DivergenceAlgo::GmmKl { .. } | DivergenceAlgo::GmmSwd { .. } => {
                let k = self.components(p.nrows().min(q.nrows()), &mut warnings);
                diag.components = k;
                let fit_p = self.fit(p.view(), k, sub_seed(seed, "gmm_p"))?;
                let fit_q = self.fit(q.view(), k, sub_seed(seed, "gmm_q"))?;
                diag.loglik_p = Some(fit_p.avg_loglik);
                diag.loglik_q = Some(fit_q.avg_loglik);
                diag.converged = fit_p.converged && fit_q.converged;
                let (ep, eq) = (fit_p.model.evaluator()?, fit_q.model.evaluator()?);
                match cfg.algorithm {
                    DivergenceAlgo::GmmKl { mc_samples } => {
                        let r = sym_weighted_kl_eval(&ep, &eq, n_target, n_blend, mc_samples, sub_seed(seed, "divergence"))?;
                        diag.mc_std_error = r.mc_std_error;
                        diag.kl_directions = r.kl_directions;
                        r.value
                    }
                    DivergenceAlgo::GmmSwd {
                        gmm_samples,
                        n_projections,
                    } => {
                        let dseed = sub_seed(seed, "divergence");
                        let sp = ep.sample(gmm_samples, sub_seed(dseed, "draw_p"));
                        let sq = eq.sample(gmm_samples, sub_seed(dseed, "draw_q"));
                        swd(sp.view(), sq.view(), n_projections, sub_seed(dseed, "projections"))?
                    }
                    _ => unreachable!(),
                }
            }
            DivergenceAlgo::Sinkhorn {
                epsilon,
                max_iter,
                tol,
                debiased,
            } => {
                let r = sinkhorn_divergence(
                    p.view(),
                    q.view(),
                    &SinkhornOptions {
                        epsilon,
                        max_iter,
                        tol,
                        debiased,
                    },
                )?;
                diag.converged = r.converged;
                if !r.converged {
                    warnings.push(format!("sinkhorn stopped at max_iter={max_iter} before reaching tol={tol}"));
                }
                diag.raw_value = r.raw;
                r.value
            }
            DivergenceAlgo::Mmd { bandwidth } => {
                let r = mmd_gaussian(p.view(), q.view(), bandwidth)?;
                diag.raw_value = r.raw;
                r.value
            }
        };
        if cfg.algorithm.uses_gmm() {
            diag.raw_value = value;
        }
        if !value.is_finite() {
            return Err(RadarError::Request(format!("non-finite score at layer {layer}")));
        }
        for w in &warnings {
            warn!("{w}");
        }
        diag.warnings = warnings;
        let mut names: Vec<String> = blend.iter().map(|s| s.to_string()).collect();
        names.sort();
        Ok(RadarScore {
            value,
            target: target.to_string(),
            blend: names,
            center_layer: layer,
            config_digest: self.digest.clone(),
            diagnostics: diag,
        })
    }

    /// One score per center layer, in layer order.
    pub fn radar_profile(&self, target: &str, blend: &[&str]) -> Result<Vec<RadarScore>> {
        (0..self.pack.num_layers())
            .map(|l| self.radar_score(target, blend, l))
            .collect()
    }

    /// `min(2C, 50)`, reduced to `max(1, rows / 10)` when there are fewer
    /// descriptor rows than components.
    fn components(&self, rows: usize, warnings: &mut Vec<String>) -> usize {
        let k = components_for_classes(self.pack.num_classes()).max(1);
        if rows < k {
            let reduced = (rows / 10).max(1);
            warnings.push(format!("only {rows} descriptor rows for {k} components; using {reduced}"));
            reduced
        } else {
            k
        }
    }

    fn fit(&self, x: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<GmmFit> {
        Ok(fit_gmm(x, &GmmOptions::new(k, self.config.covariance, seed))?)
    }
}
