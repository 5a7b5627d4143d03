//! Experiment configuration: scale preset, then config file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use fkan::{Architecture, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Image,
    Volume,
    Synthetic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Small model and schedule that finish in minutes on a laptop core.
    #[default]
    Desk,
    /// Full-size model and schedule.
    Paper,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    None,
    TanhMlp,
}

/// Flags shared by `train`, `eval` and `compare`. Every field is optional so
/// that unset flags fall through to the config file and then the preset.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentArgs {
    /// TOML file with any of these options (flags take precedence).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    /// PNG/JPEG image for `image`, raw occupancy grid for `volume`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    /// Alias of `--scale`.
    #[arg(long, value_enum, conflicts_with = "scale")]
    #[serde(skip)]
    pub epochs_scale: Option<Scale>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Samples per step; 0 trains full-batch. Defaults to full batch up to
    /// 65,536 samples and 8,192-sample mini-batches above that.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Log loss and metric every N steps (default: every epoch).
    #[arg(long)]
    pub metric_every: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub omega0: Option<f64>,
    /// Side length of the synthetic image, or resolution of the generated
    /// sphere volume.
    #[arg(long)]
    pub width: Option<usize>,
    /// Frequencies of the synthetic pattern, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub freqs: Option<Vec<f64>>,
    /// Occupancy threshold for volume reconstructions.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Write zeros in the `seconds` column of convergence.csv.
    #[arg(long)]
    #[serde(default)]
    pub no_wall_clock: bool,
}

impl ExperimentArgs {
    fn merged_over(self, file: ExperimentArgs) -> ExperimentArgs {
        macro_rules! pick {
            ($($f:ident),*) => {
                ExperimentArgs {
                    config: self.config,
                    epochs_scale: self.epochs_scale,
                    no_wall_clock: self.no_wall_clock || file.no_wall_clock,
                    $($f: self.$f.or(file.$f),)*
                }
            };
        }
        pick!(
            task,
            input,
            scale,
            seed,
            epochs,
            lr,
            batch_size,
            metric_every,
            grid_size,
            latent_dim,
            hidden,
            omega0,
            width,
            freqs,
            threshold,
            baseline
        )
    }
}

/// Fully resolved experiment. Written next to the artifacts as
/// `experiment.toml` so `eval` can rebuild the same dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub task: Task,
    pub scale: Scale,
    pub input: Option<PathBuf>,
    pub width: usize,
    pub freqs: Vec<f64>,
    pub threshold: f64,
    pub baseline: Baseline,
    /// `None` picks the size from the dataset at load time.
    pub batch_size: Option<usize>,
    pub metric_every: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const EXPERIMENT_FILE: &str = "experiment.toml";

/// Wrong or inconsistent user input; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn preset(task: Task, scale: Scale) -> (ModelConfig, usize, usize) {
    let (model, epochs, width) = match scale {
        Scale::Desk => (
            ModelConfig {
                latent_dim: 64,
                grid_size: 32,
                hidden_widths: vec![64, 64],
                ..ModelConfig::default()
            },
            match task {
                Task::Volume => 200,
                _ => 2000,
            },
            match task {
                Task::Volume => 48,
                _ => 64,
            },
        ),
        Scale::Paper => (
            ModelConfig::default(),
            match task {
                Task::Volume => 200,
                _ => 500,
            },
            match task {
                Task::Volume => 128,
                _ => 256,
            },
        ),
    };
    (model, epochs, width)
}

pub fn read_file(path: &Path) -> Result<ExperimentArgs> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("invalid config file {}: {e}", path.display())))
}

impl Experiment {
    pub fn resolve(args: ExperimentArgs) -> Result<Experiment> {
        let file = match &args.config {
            Some(p) => read_file(p)?,
            None => ExperimentArgs::default(),
        };
        let mut a = args.merged_over(file);
        if a.epochs_scale.is_some() {
            a.scale = a.epochs_scale;
        }
        let task = a.task.ok_or_else(|| usage("--task is required"))?;
        let scale = a.scale.unwrap_or_default();
        let (mut model, epochs, width) = preset(task, scale);
        let width = a.width.unwrap_or(width);

        model.input_dim = match task {
            Task::Volume => 3,
            _ => 2,
        };
        // Image channel count is only known once the file is read.
        model.output_dim = 1;
        model.seed = a.seed.unwrap_or(0);
        model.architecture = Architecture::Fkan;
        if let Some(v) = a.grid_size {
            model.grid_size = v;
        }
        if let Some(v) = a.latent_dim {
            model.latent_dim = v;
        }
        if let Some(v) = a.hidden {
            model.hidden_widths = v;
        }
        if let Some(v) = a.omega0 {
            model.omega0 = v;
        }

        let train = TrainConfig {
            epochs: a.epochs.unwrap_or(epochs),
            batch_size: a.batch_size.unwrap_or(0),
            lr: a.lr.unwrap_or(1e-4),
            seed: model.seed,
            metric_every: a.metric_every.unwrap_or(1),
            record_wall_time: !a.no_wall_clock,
        };

        let exp = Experiment {
            task,
            scale,
            input: a.input,
            width,
            freqs: a.freqs.unwrap_or_else(|| vec![2.0, 16.0]),
            threshold: a.threshold.unwrap_or(0.5),
            baseline: a.baseline.unwrap_or_default(),
            batch_size: a.batch_size,
            metric_every: a.metric_every,
            model,
            train,
        };
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.task, &self.input) {
            (Task::Image, None) => return Err(usage("--task image needs --input")),
            (Task::Synthetic, Some(_)) => {
                return Err(usage("--task synthetic takes no --input"));
            }
            (_, Some(p)) if !p.is_file() => {
                return Err(usage(format!("input file {} does not exist", p.display())));
            }
            _ => {}
        }
        if self.width < 2 {
            bail!(UsageError(format!(
                "--width must be at least 2, got {}",
                self.width
            )));
        }
        if self.freqs.is_empty() || self.freqs.iter().any(|f| !f.is_finite()) {
            return Err(usage("--freqs must be a non-empty list of finite numbers"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(usage(format!(
                "--threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        self.model
            .validate()
            .map_err(|e| usage(format!("invalid model: {e}")))?;
        self.train
            .validate()
            .map_err(|e| usage(format!("invalid training options: {e}")))?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing experiment")
    }

    pub fn load(path: &Path) -> Result<Experiment> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
