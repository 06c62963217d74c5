//! Flag parsing and run configuration.
//!
//! Every option is resolved in the order flag, config file, built-in default.
//! The config file is flat TOML: one `key = value` line per option, using the
//! keys of [`FileConfig`]. The resolved [`RunConfig`] is written next to the
//! outputs as `run_config.toml`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dds_core::distortion::DEFAULT_BLOCKS;
use dds_core::equirect::Resolution;
use dds_core::metrics::FAggregation;
use dds_core::network::ProfileName;
use dds_core::supervision::TrainConfig;
use dds_core::DdsError;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "dds", version, about = "Salient object detection on equirectangular 360° images")]
pub struct Cli {
    /// Flat TOML file with default values for any option below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice made by the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Backbone profile: mini or resnet50-dilated.
    #[arg(long, global = true)]
    pub profile: Option<ProfileName>,
    /// Blocks per side of the distortion-adaptive grid.
    #[arg(long, global = true)]
    pub blocks: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate image/mask pairs of random spherical caps plus a manifest.
    Synth(SynthArgs),
    /// Train a network on the train split of a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Write the saliency map of a single image.
    Predict(PredictArgs),
    /// Average annotation map and object histograms of a manifest.
    Stats(StatsArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Predict(_) => "predict",
            Command::Stats(_) => "stats",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: Option<usize>,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long)]
    pub resolution: Option<Res>,
    /// Fraction of records tagged train; the rest are tagged test.
    #[arg(long)]
    pub split_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Training input size as WIDTHxHEIGHT.
    #[arg(long)]
    pub resolution: Option<Res>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub use_da: Option<bool>,
    #[arg(long)]
    pub use_mci: Option<bool>,
    #[arg(long)]
    pub deep_supervision: Option<bool>,
    /// Print progress every this many iterations.
    #[arg(long)]
    pub log_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub split: Option<SplitChoice>,
    /// Network input size as WIDTHxHEIGHT; predictions are resized back to
    /// each mask's own size before scoring.
    #[arg(long)]
    pub resolution: Option<Res>,
    /// per-image or pooled F_beta.
    #[arg(long, value_parser = parse_aggregation)]
    pub aggregation: Option<FAggregation>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output PNG; defaults to `<out>/<image stem>_saliency.png`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<Res>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Size of the average annotation map as WIDTHxHEIGHT.
    #[arg(long)]
    pub resolution: Option<Res>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

fn parse_aggregation(s: &str) -> Result<FAggregation, String> {
    match s {
        "per-image" => Ok(FAggregation::PerImage),
        "pooled" => Ok(FAggregation::Pooled),
        _ => Err(format!("expected per-image or pooled, got {s:?}")),
    }
}

/// `WIDTHxHEIGHT`, e.g. `512x256`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Res(pub Resolution);

impl FromStr for Res {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected WIDTHxHEIGHT, got {s:?}");
        let (w, h) = s.split_once('x').ok_or_else(bad)?;
        let w: usize = w.trim().parse().map_err(|_| bad())?;
        let h: usize = h.trim().parse().map_err(|_| bad())?;
        if w == 0 || h == 0 {
            return Err(bad());
        }
        Ok(Res(Resolution::new(w, h)))
    }
}

impl TryFrom<String> for Res {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Res> for String {
    fn from(r: Res) -> String {
        r.to_string()
    }
}

impl fmt::Display for Res {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Contents of a `--config` file. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub profile: Option<ProfileName>,
    pub blocks: Option<usize>,
    pub out: Option<PathBuf>,
    // synth
    pub count: Option<usize>,
    pub resolution: Option<Res>,
    pub split_ratio: Option<f64>,
    // train
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub head_lr_mult: Option<f64>,
    pub weight_decay: Option<f64>,
    pub momentum: Option<f64>,
    pub poly_power: Option<f64>,
    pub hflip_prob: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub use_da: Option<bool>,
    pub use_mci: Option<bool>,
    pub deep_supervision: Option<bool>,
    pub head_width: Option<usize>,
    pub log_every: Option<usize>,
    // eval
    pub split: Option<SplitChoice>,
    pub aggregation: Option<FAggregation>,
    // stats
    pub count_edges: Option<Vec<f64>>,
    pub area_edges: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|source| DdsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRun {
    pub count: usize,
    pub resolution: Res,
    pub split_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub manifest: PathBuf,
    pub log_every: usize,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub split: SplitChoice,
    pub resolution: Res,
    pub aggregation: FAggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRun {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    pub output: PathBuf,
    pub resolution: Res,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRun {
    pub manifest: PathBuf,
    pub resolution: Res,
    pub count_edges: Vec<f64>,
    pub area_edges: Vec<f64>,
}

/// Fully resolved options of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub profile: ProfileName,
    pub blocks: usize,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<StatsRun>,
}

pub const DEFAULT_COUNT: usize = 10;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;
pub const DEFAULT_LOG_EVERY: usize = 100;

pub fn default_count_edges() -> Vec<f64> {
    (0..=10).map(f64::from).collect()
}

pub fn default_area_edges() -> Vec<f64> {
    vec![0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]
}

/// Inputs that only become known after loading the checkpoint.
pub struct CheckpointInfo {
    pub profile: ProfileName,
    pub blocks: usize,
}

impl RunConfig {
    /// Merge flags over the config file over defaults. `ckpt` carries the
    /// network shape for commands that start from a checkpoint; it takes the
    /// place of `--profile` and `--blocks`.
    pub fn resolve(cli: &Cli, file: &FileConfig, ckpt: Option<CheckpointInfo>) -> CliResult<Self> {
        let seed = cli.seed.or(file.seed).unwrap_or(0);
        let (profile, blocks) = match ckpt {
            Some(c) => (c.profile, c.blocks),
            None => (
                cli.profile.or(file.profile).unwrap_or(ProfileName::Mini),
                cli.blocks.or(file.blocks).unwrap_or(DEFAULT_BLOCKS),
            ),
        };
        let out = cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
        let mut run = RunConfig {
            command: cli.command.name().to_string(),
            seed,
            profile,
            blocks,
            out,
            synth: None,
            train: None,
            eval: None,
            predict: None,
            stats: None,
        };
        let default_input = TrainConfig::for_profile(profile).input;
        match &cli.command {
            Command::Synth(a) => {
                run.synth = Some(SynthRun {
                    count: a.count.or(file.count).unwrap_or(DEFAULT_COUNT),
                    resolution: a.resolution.or(file.resolution).unwrap_or(Res(Resolution::CANONICAL)),
                    split_ratio: a.split_ratio.or(file.split_ratio).unwrap_or(DEFAULT_SPLIT_RATIO),
                });
            }
            Command::Train(a) => {
                let mut c = TrainConfig::for_profile(profile);
                c.seed = seed;
                c.network.blocks = blocks;
                macro_rules! set {
                    ($field:expr, $($src:expr),+) => {
                        if let Some(v) = None$(.or($src))+ {
                            $field = v;
                        }
                    };
                }
                set!(c.iterations, a.iterations, file.iterations);
                set!(c.batch_size, a.batch_size, file.batch_size);
                set!(c.base_lr, a.base_lr, file.base_lr);
                set!(c.head_lr_mult, file.head_lr_mult);
                set!(c.weight_decay, file.weight_decay);
                set!(c.momentum, file.momentum);
                set!(c.poly_power, file.poly_power);
                set!(c.hflip_prob, file.hflip_prob);
                set!(c.checkpoint_every, a.checkpoint_every, file.checkpoint_every);
                set!(c.deep_supervision, a.deep_supervision, file.deep_supervision);
                set!(c.network.use_da, a.use_da, file.use_da);
                set!(c.network.use_mci, a.use_mci, file.use_mci);
                set!(c.network.head_width, file.head_width);
                if let Some(r) = a.resolution.or(file.resolution) {
                    c.input = r.0;
                }
                c.validate()?;
                run.train = Some(TrainRun {
                    manifest: a.manifest.clone(),
                    log_every: a.log_every.or(file.log_every).unwrap_or(DEFAULT_LOG_EVERY).max(1),
                    config: c,
                });
            }
            Command::Eval(a) => {
                run.eval = Some(EvalRun {
                    checkpoint: a.checkpoint.clone(),
                    manifest: a.manifest.clone(),
                    split: a.split.or(file.split).unwrap_or(SplitChoice::Test),
                    resolution: a.resolution.or(file.resolution).unwrap_or(Res(default_input)),
                    aggregation: a.aggregation.or(file.aggregation).unwrap_or_default(),
                });
            }
            Command::Predict(a) => {
                let output = a.output.clone().unwrap_or_else(|| {
                    let stem = a.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    run.out.join(format!("{stem}_saliency.png"))
                });
                run.predict = Some(PredictRun {
                    checkpoint: a.checkpoint.clone(),
                    image: a.image.clone(),
                    output,
                    resolution: a.resolution.or(file.resolution).unwrap_or(Res(default_input)),
                });
            }
            Command::Stats(a) => {
                run.stats = Some(StatsRun {
                    manifest: a.manifest.clone(),
                    resolution: a.resolution.or(file.resolution).unwrap_or(Res(Resolution::CANONICAL)),
                    count_edges: file.count_edges.clone().unwrap_or_else(default_count_edges),
                    area_edges: file.area_edges.clone().unwrap_or_else(default_area_edges),
                });
            }
        }
        Ok(run)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("cannot serialize run config: {e}")))
    }

    /// Write `run_config.toml` into the output directory.
    pub fn save(&self) -> CliResult<()> {
        let path = self.out.join("run_config.toml");
        let io = |source| DdsError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(&self.out).map_err(io)?;
        fs::write(&path, self.to_toml()?).map_err(io)?;
        Ok(())
    }
}
