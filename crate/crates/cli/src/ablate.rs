//! `ablate`: MCI over a grid of config variants.

use std::collections::BTreeMap;

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::{json, Value};

use radar_core::evaluation::{rank_blends, RankBy};
use radar_core::sampling::StrategyKind;
use radar_core::{RadarConfig, RadarEngine};

use crate::args::AblateArgs;
use crate::{blends_for, check_gains, layers_or_all, load, read_gains, CmdResult, Ctx};

#[derive(Debug, Serialize)]
struct Row {
    name: String,
    digest: String,
    config: RadarConfig,
    mean_rho_metric: f64,
    mean_rho_base: f64,
    mci: f64,
    warnings: Vec<String>,
}

/// Objects merge key by key; anything else replaces. An `algorithm` entry
/// replaces the base algorithm outright, since its fields depend on the name.
fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                if k == "algorithm" {
                    let v = match v {
                        Value::String(name) => json!({ "name": name }),
                        other => other.clone(),
                    };
                    b.insert(k.clone(), v);
                } else {
                    merge(b.entry(k.clone()).or_insert(Value::Null), v);
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Variants are either bare partial configs or `{"name": .., "config": {..}}`.
pub fn parse_grid(text: &str, base: &RadarConfig) -> anyhow::Result<Vec<(String, RadarConfig)>> {
    let grid: Vec<Value> = serde_json::from_str(text).context("grid must be a JSON list")?;
    let base_value = serde_json::to_value(base)?;
    let mut out = Vec::with_capacity(grid.len());
    for (i, entry) in grid.iter().enumerate() {
        let (name, patch) = match entry.get("config") {
            Some(c) => (
                entry.get("name").and_then(Value::as_str).map_or(format!("variant{i}"), String::from),
                c,
            ),
            None => (format!("variant{i}"), entry),
        };
        if !patch.is_object() {
            return Err(anyhow!("grid entry {i} is not an object"));
        }
        let mut v = base_value.clone();
        merge(&mut v, patch);
        let cfg: RadarConfig = serde_json::from_value(v).with_context(|| format!("grid entry {i} ({name})"))?;
        cfg.validate().with_context(|| format!("grid entry {i} ({name})"))?;
        out.push((name, cfg));
    }
    Ok(out)
}

fn table(rows: &[Row]) -> String {
    let yes = |b: bool| if b { "yes" } else { "no" };
    let mut s = format!(
        "{:<12} {:<8} {:<5} {:<11} {:<8} {:<8} {:<9} {:<10} {:<8} {:>10} {:>8} {:>8}\n",
        "Variant", "Distance", "Angle", "Standardize", "Sampling", "Replace.", "Space", "Covariance", "Algorithm", "rho_metric", "rho_base", "MCI(pt)"
    );
    for r in rows {
        let c = &r.config;
        let enum_name = |v: Value| v.as_str().unwrap_or("?").to_string();
        let sampling = match c.strategy.kind {
            StrategyKind::Uniform => "uniform",
            StrategyKind::Positive => "positive",
            StrategyKind::Negative => "negative",
            StrategyKind::Mix => "mix",
        };
        s.push_str(&format!(
            "{:<12} {:<8} {:<5} {:<11} {:<8} {:<8} {:<9} {:<10} {:<8} {:>+10.4} {:>+8.4} {:>+8.2}\n",
            r.name,
            yes(c.use_distance),
            yes(c.use_angle),
            yes(c.standardize),
            sampling,
            yes(c.strategy.replacement),
            enum_name(serde_json::to_value(c.space).unwrap_or_default()),
            enum_name(serde_json::to_value(c.covariance).unwrap_or_default()),
            c.algorithm.name(),
            r.mean_rho_metric,
            r.mean_rho_base,
            100.0 * r.mci
        ));
    }
    s
}

pub fn cmd_ablate(ctx: &mut Ctx, a: &AblateArgs) -> CmdResult {
    let base = a.config.resolve()?;
    let text = std::fs::read_to_string(&a.grid).with_context(|| format!("reading {}", a.grid.display()))?;
    let variants = parse_grid(&text, &base)?;
    let pack = load(&a.blends.pack)?;
    let blends = blends_for(&pack, &a.blends)?;
    let layers = layers_or_all(&pack, &a.layer);
    let gains = read_gains(&a.gains)?;
    check_gains(&gains, &blends, &layers)?;
    if blends.len() < 2 {
        return Err(anyhow!("ablation needs at least 2 blends, got {}", blends.len()).into());
    }

    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    // sample-based algorithms ignore the covariance kind, so variants that
    // differ only there share one run
    let mut effective: BTreeMap<String, usize> = BTreeMap::new();
    let mut duplicates = Vec::new();
    let mut rows: Vec<Row> = Vec::new();
    for (name, cfg) in variants {
        let digest = cfg.digest();
        if let Some(first) = seen.get(&digest) {
            log::warn!("variant '{name}' repeats '{first}'; skipped");
            duplicates.push(json!({ "name": name, "same_as": first }));
            continue;
        }
        seen.insert(digest.clone(), name.clone());
        let key = if cfg.algorithm.uses_gmm() {
            digest.clone()
        } else {
            RadarConfig {
                covariance: Default::default(),
                ..cfg
            }
            .digest()
        };
        if let Some(&i) = effective.get(&key) {
            let shared = &rows[i];
            rows.push(Row {
                name,
                digest,
                config: cfg,
                mean_rho_metric: shared.mean_rho_metric,
                mean_rho_base: shared.mean_rho_base,
                mci: shared.mci,
                warnings: shared.warnings.clone(),
            });
            continue;
        }
        effective.insert(key, rows.len());
        let engine = RadarEngine::new(&pack, cfg)?;
        let ranking = rank_blends(&engine, &a.blends.target, &blends, Some(&layers), RankBy::Mean, Some(&gains))?;
        ctx.stages.mark(&format!("variant {name}"));
        let report = ranking.report.expect("gains given and at least 2 blends");
        rows.push(Row {
            name,
            digest,
            config: cfg,
            mean_rho_metric: report.mean_rho_metric,
            mean_rho_base: report.mean_rho_base,
            mci: report.mci,
            warnings: report.warnings,
        });
    }

    let outputs: Vec<&std::path::Path> = a.out.iter().map(|p| p.as_path()).collect();
    let doc = json!({
        "record": ctx.record("ablate", Some(&base), &outputs),
        "target": a.blends.target,
        "layers": layers,
        "rows": rows,
        "duplicates": duplicates,
    });
    ctx.emit(&doc, &table(&rows), a.out.as_deref())
}
