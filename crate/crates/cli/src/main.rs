mod ablate;
mod args;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::Parser;
use log::info;
use serde::Serialize;
use serde_json::json;

use radar_core::evaluation::{centroid_matrix, enumerate_blends, rank_blends, BlendMode, EvalError, GainsTable, RankBy};
use radar_core::feature_pack::{load_pack, validate_pack, write_pack, Severity};
use radar_core::pipeline::blend_id;
use radar_core::synthetic::{gen_pack, proxy_gains, GainsProxy, SyntheticSpec};
use radar_core::{FeaturePack, RadarConfig, RadarEngine, RadarError, ENGINE_VERSION};

use args::{BlendArgs, Cli, Command, ProxyGainsArgs, RankArgs, ScoreArgs};

/// Exit status 2: bad input or config. 1: internal failure.
pub struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let err = e.into();
        let internal = err
            .chain()
            .any(|c| c.downcast_ref::<RadarError>().is_some_and(|r| !r.is_input_error()));
        Failure {
            code: if internal { 1 } else { 2 },
            err,
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

const SEED_DERIVATION: &str = "layer_seed = H(seed, \"layer\", l); within, cross, baseline, gmm_p, gmm_q, divergence = H(layer_seed, tag); H = first 8 bytes of SHA-256, little endian";

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub engine_version: &'static str,
    pub command: String,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub seed_derivation: &'static str,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

/// Stage timer; times always go to the log, and into the record only on request.
pub struct Stages {
    keep: bool,
    last: Instant,
    times: BTreeMap<String, f64>,
}

impl Stages {
    fn new(keep: bool) -> Self {
        Self {
            keep,
            last: Instant::now(),
            times: BTreeMap::new(),
        }
    }

    pub fn mark(&mut self, stage: &str) {
        let secs = self.last.elapsed().as_secs_f64();
        info!("{stage}: {secs:.3}s");
        *self.times.entry(stage.to_string()).or_default() += secs;
        self.last = Instant::now();
    }

    fn take(&mut self) -> Option<BTreeMap<String, f64>> {
        self.keep.then(|| std::mem::take(&mut self.times))
    }
}

pub struct Ctx {
    pub json: bool,
    pub stages: Stages,
}

impl Ctx {
    pub fn record(&mut self, command: &str, cfg: Option<&RadarConfig>, outputs: &[&Path]) -> RunRecord {
        RunRecord {
            engine_version: ENGINE_VERSION,
            command: command.to_string(),
            config_digest: cfg.map(|c| c.digest()),
            seed: cfg.map(|c| c.seed),
            seed_derivation: SEED_DERIVATION,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            timings: self.stages.take(),
        }
    }

    /// JSON goes to `out` when given, and to stdout with `--json`; otherwise
    /// stdout gets `text`.
    pub fn emit(&self, doc: &serde_json::Value, text: &str, out: Option<&Path>) -> CmdResult {
        let rendered = serde_json::to_string_pretty(doc)? + "\n";
        if let Some(path) = out {
            std::fs::write(path, &rendered).with_context(|| format!("writing {}", path.display()))?;
        }
        let mut stdout = std::io::stdout().lock();
        if self.json {
            stdout.write_all(rendered.as_bytes())?;
        } else {
            stdout.write_all(text.as_bytes())?;
        }
        Ok(())
    }
}

pub fn load(path: &Path) -> CmdResult<FeaturePack> {
    Ok(load_pack(path).with_context(|| format!("loading pack {}", path.display()))?)
}

pub fn split_sources(s: &str) -> anyhow::Result<Vec<String>> {
    let names: Vec<String> = s.split('+').map(|p| p.trim().to_string()).collect();
    if names.iter().any(String::is_empty) {
        return Err(anyhow!("malformed source list '{s}': expected names joined with '+'"));
    }
    Ok(names)
}

pub fn blends_for(pack: &FeaturePack, args: &BlendArgs) -> CmdResult<Vec<Vec<String>>> {
    pack.domain_index(&args.target)?;
    let sources = match &args.sources {
        Some(s) => split_sources(s)?,
        None => pack.domain_names().filter(|n| *n != args.target).map(String::from).collect(),
    };
    for s in &sources {
        pack.domain_index(s)?;
    }
    let mode: BlendMode = args.mode.into();
    Ok(enumerate_blends(&sources, mode)?)
}

pub fn layers_or_all(pack: &FeaturePack, layers: &[usize]) -> Vec<usize> {
    let mut l = if layers.is_empty() {
        (0..pack.num_layers()).collect()
    } else {
        layers.to_vec()
    };
    l.sort_unstable();
    l.dedup();
    l
}

/// Fail early, naming every (blend, layer) cell the gains table lacks.
pub fn check_gains(gains: &GainsTable, blends: &[Vec<String>], layers: &[usize]) -> CmdResult {
    let mut warnings = Vec::new();
    let grid = gains.delta_grid(&layers.iter().copied().collect(), &mut warnings);
    for w in warnings {
        log::warn!("{w}");
    }
    let missing: Vec<(String, usize)> = blends
        .iter()
        .flat_map(|b| layers.iter().map(move |&l| (blend_id(b), l)))
        .filter(|k| !grid.contains_key(k))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(EvalError::MissingGains(missing).into())
    }
}

pub fn read_gains(path: &Path) -> CmdResult<GainsTable> {
    Ok(GainsTable::read_csv(path).with_context(|| format!("reading gains {}", path.display()))?)
}

fn cmd_validate(ctx: &mut Ctx, pack: &Path) -> CmdResult<u8> {
    let report = validate_pack(pack);
    let mut text = String::new();
    for issue in &report.issues {
        let tag = match issue.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        text.push_str(&format!("{tag}: {}\n", issue.message));
    }
    text.push_str(if report.ok { "ok\n" } else { "invalid pack\n" });
    let doc = json!({ "report": report, "record": ctx.record("validate", None, &[]) });
    ctx.emit(&doc, &text, None)?;
    Ok(if report.ok { 0 } else { 2 })
}

fn cmd_score(ctx: &mut Ctx, a: &ScoreArgs) -> CmdResult {
    let cfg = a.config.resolve()?;
    let pack = load(&a.pack)?;
    ctx.stages.mark("load");
    let sources = split_sources(&a.sources)?;
    let srcs: Vec<&str> = sources.iter().map(String::as_str).collect();
    let engine = RadarEngine::new(&pack, cfg)?;
    let layers = if a.all_layers {
        (0..pack.num_layers()).collect()
    } else {
        layers_or_all(&pack, &a.layer)
    };
    let scores = {
        use rayon::prelude::*;
        layers
            .par_iter()
            .map(|&l| engine.radar_score(&a.target, &srcs, l))
            .collect::<Result<Vec<_>, _>>()?
    };
    ctx.stages.mark("score");

    let mut text = format!(
        "target {}  blend {}  config {}\nlayer  score\n",
        a.target,
        blend_id(&sources),
        &engine.digest()[..12]
    );
    for s in &scores {
        text.push_str(&format!("{:>5}  {:.6}\n", s.center_layer, s.value));
        for w in &s.diagnostics.warnings {
            text.push_str(&format!("       warning: {w}\n"));
        }
    }
    let outputs: Vec<&Path> = a.out.iter().map(PathBuf::as_path).collect();
    let doc = json!({
        "record": ctx.record("score", Some(&cfg), &outputs),
        "config": cfg,
        "scores": scores,
    });
    ctx.emit(&doc, &text, a.out.as_deref())
}

fn cmd_rank(ctx: &mut Ctx, a: &RankArgs) -> CmdResult {
    let cfg = a.config.resolve()?;
    let pack = load(&a.blends.pack)?;
    ctx.stages.mark("load");
    let blends = blends_for(&pack, &a.blends)?;
    let layers = layers_or_all(&pack, &a.layer);
    let gains = a.gains.as_deref().map(read_gains).transpose()?;
    if let Some(g) = &gains {
        if blends.len() > 1 {
            check_gains(g, &blends, &layers)?;
        }
    }
    let engine = RadarEngine::new(&pack, cfg)?;
    let rank_by = a.rank_layer.map_or(RankBy::Mean, RankBy::Layer);
    let ranking = rank_blends(&engine, &a.blends.target, &blends, Some(&layers), rank_by, gains.as_ref())?;
    ctx.stages.mark("rank");

    let mut text = format!("target {}  config {}\nrank  key         blend\n", a.blends.target, &engine.digest()[..12]);
    for (i, b) in ranking.blends.iter().enumerate() {
        text.push_str(&format!("{:>4}  {:<10.6}  {}\n", i + 1, b.key, b.blend_id));
    }
    if let Some(r) = &ranking.report {
        text.push('\n');
        text.push_str(&r.to_text());
        for w in &r.warnings {
            text.push_str(&format!("warning: {w}\n"));
        }
    }
    let outputs: Vec<&Path> = a.out.iter().map(PathBuf::as_path).collect();
    let doc = json!({
        "record": ctx.record("rank", Some(&cfg), &outputs),
        "config": cfg,
        "ranking": ranking,
    });
    ctx.emit(&doc, &text, a.out.as_deref())
}

fn cmd_synth(ctx: &mut Ctx, spec: &Path, out: &Path) -> CmdResult {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec = SyntheticSpec::from_json(&text)?;
    let pack = gen_pack(&spec)?;
    ctx.stages.mark("generate");
    write_pack(&pack, out)?;
    ctx.stages.mark("write");
    let summary = format!(
        "wrote {} ({} domains, {} layers, {} samples, dim {})\n",
        out.display(),
        spec.domains.len(),
        spec.layers,
        pack.num_samples(),
        spec.dim
    );
    let doc = json!({ "record": ctx.record("synth", None, &[out]), "spec": spec });
    ctx.emit(&doc, &summary, None)
}

fn cmd_proxy_gains(ctx: &mut Ctx, a: &ProxyGainsArgs) -> CmdResult {
    let pack = load(&a.blends.pack)?;
    let blends = blends_for(&pack, &a.blends)?;
    let proxy = GainsProxy {
        holdout: a.holdout,
        seeds: (0..a.splits).collect(),
    };
    let table = proxy_gains(&pack, &a.blends.target, &blends, &proxy)?;
    ctx.stages.mark("proxy_gains");
    let mut csv_bytes = Vec::new();
    table.write_to(&mut csv_bytes)?;
    if let Some(path) = &a.out {
        std::fs::write(path, &csv_bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    if ctx.json {
        let doc = json!({ "record": ctx.record("proxy-gains", None, &a.out.iter().map(PathBuf::as_path).collect::<Vec<_>>()), "rows": table.rows });
        ctx.emit(&doc, "", None)
    } else {
        if a.out.is_none() {
            std::io::stdout().write_all(&csv_bytes)?;
        }
        Ok(())
    }
}

fn cmd_centroids(ctx: &mut Ctx, pack: &Path, layer: usize, out: Option<&Path>) -> CmdResult {
    let pack = load(pack)?;
    let m = centroid_matrix(&pack, layer)?;
    let names: Vec<&str> = pack.domain_names().collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["domain".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (i, name) in names.iter().enumerate() {
        let mut rec = vec![name.to_string()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow!("csv: {e}"))?;
    if let Some(path) = out {
        std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    if ctx.json {
        let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        let doc = json!({ "record": ctx.record("centroids", None, &out.into_iter().collect::<Vec<_>>()), "layer": layer, "domains": names, "distances": rows });
        ctx.emit(&doc, "", None)
    } else {
        if out.is_none() {
            std::io::stdout().write_all(&bytes)?;
        }
        Ok(())
    }
}

fn run(cli: &Cli) -> CmdResult<u8> {
    let mut ctx = Ctx {
        json: cli.json,
        stages: Stages::new(cli.timings),
    };
    match &cli.command {
        Command::Validate { pack } => return cmd_validate(&mut ctx, pack),
        Command::Score(a) => cmd_score(&mut ctx, a)?,
        Command::Rank(a) => cmd_rank(&mut ctx, a)?,
        Command::Synth { spec, out } => cmd_synth(&mut ctx, spec, out)?,
        Command::ProxyGains(a) => cmd_proxy_gains(&mut ctx, a)?,
        Command::Centroids { pack, layer, out } => cmd_centroids(&mut ctx, pack, *layer, out.as_deref())?,
        Command::Ablate(a) => ablate::cmd_ablate(&mut ctx, a)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(f)) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
        Err(_) => ExitCode::from(1),
    }
}
