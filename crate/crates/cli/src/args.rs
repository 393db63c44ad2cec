use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "superlinear", version, about = "Sparse mixture of frequency-specialized linear experts")]
pub struct Cli {
    /// TOML file with defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (1 gives bit-reproducible runs).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write JSON-lines logs here instead of stderr.
    #[arg(long, global = true)]
    pub log_file: Option<PathBuf>,
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stage 1: train one expert per frequency and write a manifest.
    TrainExperts(TrainExpertsArgs),
    /// Stage 2: train the router and complementary experts on frozen experts.
    TrainRouter(TrainRouterArgs),
    /// Forecast every column of a CSV file.
    Forecast(ForecastArgs),
    /// Benchmark evaluation with standard splits and scaling.
    Evaluate(EvaluateArgs),
    /// Parameter counts, expert usage and error-bound diagnostics.
    Analyze(AnalyzeArgs),
    /// Synthetic sine-mixture sweep over expert counts.
    SineExp(SineExpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Zs,
    Fs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channels {
    Independent,
    Multivariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Short {
    Ceil,
    Exact,
}

/// Global keys plus one optional table per subcommand.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub log_file: Option<PathBuf>,
    pub log_level: Option<String>,
    pub train_experts: TrainExpertsArgs,
    pub train_router: TrainRouterArgs,
    pub forecast: ForecastArgs,
    pub evaluate: EvaluateArgs,
    pub analyze: AnalyzeArgs,
    pub sine_exp: SineExpArgs,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }
}

/// Fills every unset flag from the config file.
pub trait Merge {
    fn merge(&mut self, file: Self);
}

macro_rules! merge_fields {
    ($ty:ty { $($opt:ident),* } { $($flag:ident),* }) => {
        impl Merge for $ty {
            fn merge(&mut self, file: Self) {
                $(if self.$opt.is_none() { self.$opt = file.$opt; })*
                $(self.$flag |= file.$flag;)*
            }
        }
    };
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainExpertsArgs {
    /// Corpus CSV files (repeat or comma-separate).
    #[arg(long, value_delimiter = ',')]
    pub corpus: Option<Vec<PathBuf>>,
    /// Sidecar CSV with `name,sampling_rate,dominant_frequency`.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Output directory for expert files and `manifest.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frequencies to train, e.g. `1/24,1/48`; defaults to the full table.
    #[arg(long)]
    pub freqs: Option<String>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Maximum training windows drawn from each dataset; 0 means no cap.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, value_enum)]
    pub channel_mode: Option<Channels>,
    /// Keep only the training part of each file, e.g. `0.6,0.2,0.2`.
    #[arg(long)]
    pub split: Option<String>,
    /// Use only the first N rows of each file.
    #[arg(long)]
    pub truncate: Option<usize>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Retrain frequencies already present in the manifest.
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

merge_fields!(TrainExpertsArgs {
    corpus, metadata, out, freqs, preset, lookback, horizon, lr, batch_size, epochs, patience, cap, stride,
    channel_mode, split, truncate, precision
} { force });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainRouterArgs {
    /// Directory written by `train-experts`.
    #[arg(long)]
    pub experts: Option<PathBuf>,
    /// Training CSV files (repeat or comma-separate).
    #[arg(long, value_delimiter = ',')]
    pub data: Option<Vec<PathBuf>>,
    /// Output checkpoint file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Candidate k values; the one with the best validation loss is kept.
    #[arg(long, value_delimiter = ',')]
    pub k_sweep: Option<Vec<usize>>,
    #[arg(long)]
    pub complementary: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_enum)]
    pub channel_mode: Option<Channels>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub truncate: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Maximum training windows per file; 0 means no cap.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Drop the complementary experts.
    #[arg(long)]
    #[serde(default)]
    pub no_comp: bool,
    /// Drop the naive and mean experts.
    #[arg(long)]
    #[serde(default)]
    pub no_naive_mean: bool,
}

merge_fields!(TrainRouterArgs {
    experts, data, out, preset, k, k_sweep, complementary, bins, lr, batch_size, epochs, patience, noise,
    channel_mode, split, truncate, stride, cap, precision
} { no_comp, no_naive_mean });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// CSV whose columns are the series to forecast.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Downsampling factors tried for inputs longer than the lookback.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<usize>>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_energy_loss: Option<f64>,
    /// Frequency bounding the admissible scales; defaults to the fastest expert in the checkpoint.
    #[arg(long)]
    pub highest_frequency: Option<f64>,
    #[arg(long, value_enum)]
    pub short_mode: Option<Short>,
}

merge_fields!(ForecastArgs { checkpoint, input, horizon, out, scales, lambda, max_energy_loss, highest_frequency, short_mode } {});

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub data: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub truncate: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    /// Inference-time top-k override.
    #[arg(long)]
    pub k: Option<usize>,
    /// Metrics to report: any of mse, mae, mase.
    #[arg(long, value_delimiter = ',')]
    pub metric: Option<Vec<String>>,
    /// Seasonal lag for MASE.
    #[arg(long)]
    pub season: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Directory for `report.csv` and `histogram.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_fields!(EvaluateArgs { checkpoint, data, split, truncate, horizons, k, metric, season, stride, out } {});

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Analyze a preset architecture instead of a checkpoint.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Report parameter counts.
    #[arg(long)]
    #[serde(default)]
    pub params: bool,
    /// Dataset for expert-usage and error-bound diagnostics.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub truncate: Option<usize>,
    /// Test windows used for the bound report.
    #[arg(long)]
    pub windows: Option<usize>,
    /// Spectral mismatch tolerance for the relaxed bound.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Directory for `histogram.csv` and `bound.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_fields!(AnalyzeArgs { checkpoint, preset, data, split, truncate, windows, eps, out } { params });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SineExpArgs {
    #[arg(long)]
    pub num_freqs: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub expert_counts: Option<Vec<usize>>,
    /// Number of seeds averaged, starting at `--seed`.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_fields!(SineExpArgs { num_freqs, noise, expert_counts, seeds, length, out } {});

pub fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, Failure> {
    v.clone().ok_or_else(|| Failure::Config(format!("missing required option --{flag}")))
}
