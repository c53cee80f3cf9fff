use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use radar_core::density::CovarianceKind;
use radar_core::divergence::DivergenceAlgo;
use radar_core::evaluation::BlendMode;
use radar_core::geometry::SpaceKind;
use radar_core::sampling::{StrategyKind, WeightTransform};
use radar_core::RadarConfig;

#[derive(Debug, Parser)]
#[command(name = "radar", version, about = "Transferability estimation from layer-to-layer feature trajectories")]
pub struct Cli {
    /// Worker threads for independent (blend, layer) jobs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Include wall-clock stage timings in the run record (breaks byte-identity).
    #[arg(long, global = true)]
    pub timings: bool,
    /// Log level on stderr.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a feature pack directory.
    Validate {
        pack: PathBuf,
    },
    /// Score one blend against a target.
    Score(ScoreArgs),
    /// Score and rank every blend of the sources.
    Rank(RankArgs),
    /// Generate a synthetic pack from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest-centroid proxy gains for every blend, as a gains CSV.
    ProxyGains(ProxyGainsArgs),
    /// Pairwise domain centroid distances at one layer, as CSV.
    Centroids {
        #[arg(long)]
        pack: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MCI of every config variant in a grid file.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("layers").required(true).args(["layer", "all_layers"]))]
pub struct ScoreArgs {
    #[arg(long)]
    pub pack: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Blend members joined with '+', e.g. a+b+c.
    #[arg(long)]
    pub sources: String,
    /// Center layer; repeatable.
    #[arg(long)]
    pub layer: Vec<usize>,
    #[arg(long)]
    pub all_layers: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    #[arg(long)]
    pub pack: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Candidate sources joined with '+'; defaults to every other domain.
    #[arg(long)]
    pub sources: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::Pairwise)]
    pub mode: ModeArg,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub blends: BlendArgs,
    /// Score only these center layers (repeatable); default all.
    #[arg(long)]
    pub layer: Vec<usize>,
    /// Rank by the score at this layer instead of the mean over layers.
    #[arg(long)]
    pub rank_layer: Option<usize>,
    /// Gains CSV; adds an evaluation report.
    #[arg(long)]
    pub gains: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProxyGainsArgs {
    #[command(flatten)]
    pub blends: BlendArgs,
    /// Fraction of each target class held out.
    #[arg(long, default_value_t = 0.3)]
    pub holdout: f64,
    /// Holdout splits averaged, seeded 0..n.
    #[arg(long, default_value_t = 5)]
    pub splits: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub blends: BlendArgs,
    #[arg(long)]
    pub gains: PathBuf,
    /// JSON list of config variants, each a partial config merged onto the base.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub layer: Vec<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Pairwise,
    Full,
}

impl From<ModeArg> for BlendMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pairwise => BlendMode::Pairwise,
            ModeArg::Full => BlendMode::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpaceArg {
    Euclidean,
    Geodesic,
    Cartesian,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CovArg {
    Diag,
    Full,
    Tied,
    Spherical,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlgoArg {
    GmmKl,
    GmmSwd,
    Sinkhorn,
    Mmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplingArg {
    Uniform,
    Positive,
    Negative,
    Mix,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TransformArg {
    Decay,
    Growth,
}

/// Engine settings. A `--config` file is the base; explicit flags override it.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON config file (same field names as the flags, snake_case).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub space: Option<SpaceArg>,
    #[arg(long, value_enum)]
    pub covariance: Option<CovArg>,
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgoArg>,
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingArg>,
    #[arg(long, value_enum)]
    pub weight_transform: Option<TransformArg>,
    /// Sample pairs with replacement.
    #[arg(long)]
    pub replacement: bool,
    #[arg(long)]
    pub no_standardize: bool,
    /// Drop the angle columns.
    #[arg(long)]
    pub no_angle: bool,
    /// Drop the distance columns.
    #[arg(long)]
    pub no_distance: bool,
    /// Pairs per descriptor batch.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Window radius in layer transitions.
    #[arg(long)]
    pub window: Option<usize>,
    /// Inlier-weight temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Uniform pairs for the standardizer fit.
    #[arg(long)]
    pub baseline_pairs: Option<usize>,
    /// Monte-Carlo samples for gmm-kl.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> anyhow::Result<RadarConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
                RadarConfig::from_json(&text)?
            }
            None => RadarConfig::default(),
        };
        if let Some(s) = self.space {
            cfg.space = match s {
                SpaceArg::Euclidean => SpaceKind::Euclidean,
                SpaceArg::Geodesic => SpaceKind::Geodesic,
                SpaceArg::Cartesian => SpaceKind::PseudoCartesian,
            };
        }
        if let Some(c) = self.covariance {
            cfg.covariance = match c {
                CovArg::Diag => CovarianceKind::Diag,
                CovArg::Full => CovarianceKind::Full,
                CovArg::Tied => CovarianceKind::Tied,
                CovArg::Spherical => CovarianceKind::Spherical,
            };
        }
        if let Some(a) = self.algorithm {
            let name = match a {
                AlgoArg::GmmKl => "gmm-kl",
                AlgoArg::GmmSwd => "gmm-swd",
                AlgoArg::Sinkhorn => "sinkhorn",
                AlgoArg::Mmd => "mmd",
            };
            if cfg.algorithm.name() != name {
                cfg.algorithm = DivergenceAlgo::from_name(name).expect("known name");
            }
        }
        if let Some(m) = self.mc_samples {
            match &mut cfg.algorithm {
                DivergenceAlgo::GmmKl { mc_samples } => *mc_samples = m,
                other => anyhow::bail!("--mc-samples applies to gmm-kl, not {}", other.name()),
            }
        }
        if let Some(s) = self.sampling {
            cfg.strategy.kind = match s {
                SamplingArg::Uniform => StrategyKind::Uniform,
                SamplingArg::Positive => StrategyKind::Positive,
                SamplingArg::Negative => StrategyKind::Negative,
                SamplingArg::Mix => StrategyKind::Mix,
            };
        }
        if let Some(t) = self.weight_transform {
            cfg.strategy.weight_transform = match t {
                TransformArg::Decay => WeightTransform::Decay,
                TransformArg::Growth => WeightTransform::Growth,
            };
        }
        if self.replacement {
            cfg.strategy.replacement = true;
        }
        if self.no_standardize {
            cfg.standardize = false;
        }
        if self.no_angle {
            cfg.use_angle = false;
        }
        if self.no_distance {
            cfg.use_distance = false;
        }
        if let Some(n) = self.pairs {
            cfg.n_pairs = n;
        }
        if let Some(w) = self.window {
            cfg.ell = w;
        }
        if let Some(t) = self.tau {
            cfg.strategy.tau = t;
        }
        if let Some(b) = self.baseline_pairs {
            cfg.baseline_pairs = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
