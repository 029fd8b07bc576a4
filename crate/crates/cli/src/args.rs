use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tabprior::prior::TaskMix;
use tabprior::GenerationConfig;

use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "tabprior", version, about = "Synthetic tabular datasets from a random structural prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a batch of datasets with metadata and a manifest.
    Generate(GenerateArgs),
    /// Render 2-D classification datasets and random-function heat fields.
    Gallery(GalleryArgs),
    /// Measure how often the predictive filter rejects first attempts.
    FilterStats(FilterStatsArgs),
    /// Build quantile distributions and run the synthetic validation suite.
    Qdist(QdistArgs),
    /// Tabulate attention entropy against context length.
    AttnDiag(AttnDiagArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Classification,
    Regression,
    Mixed,
}

impl From<TaskArg> for TaskMix {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Classification => TaskMix::Classification,
            TaskArg::Regression => TaskMix::Regression,
            TaskArg::Mixed => TaskMix::Mixed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Bin,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Bin => "bin",
        }
    }
}

/// `N` or `LOW..HIGH` (inclusive).
pub fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (parse(a)?, parse(b.trim_start_matches('='))?);
            if a > b {
                return Err(format!("empty range {a}..{b}"));
            }
            Ok((a, b))
        }
        None => parse(s).map(|v| (v, v)),
    }
}

#[derive(Clone, Debug, Args)]
pub struct PriorArgs {
    /// Base seed; dataset i uses seed + i.
    #[arg(long, env = "TABPRIOR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = TaskArg::Mixed)]
    pub task: TaskArg,
    /// Sample count, `N` or `LOW..HIGH`.
    #[arg(long, value_parser = parse_range, default_value = "1024")]
    pub rows: (usize, usize),
    /// Column count, `N` or `LOW..HIGH`.
    #[arg(long, value_parser = parse_range, default_value = "2..100")]
    pub cols: (usize, usize),
    #[arg(long = "train-frac", default_value_t = 0.5)]
    pub train_frac: f64,
    /// Run the predictive filter (default).
    #[arg(long, overrides_with = "no_filter")]
    pub filter: bool,
    #[arg(long = "no-filter", overrides_with = "filter")]
    pub no_filter: bool,
    #[arg(long, default_value_t = 64)]
    pub max_attempts: usize,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl PriorArgs {
    pub fn config(&self) -> CliResult<GenerationConfig> {
        if self.count == 0 {
            return Err(CliError::Config("--count must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        let cfg = GenerationConfig {
            rows: self.rows,
            cols: self.cols,
            task: self.task.into(),
            train_fraction: self.train_frac,
            filter: !self.no_filter,
            max_attempts: self.max_attempts,
            ..GenerationConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.count as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GalleryArgs {
    #[arg(long, env = "TABPRIOR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Number of datasets in the grid.
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 512)]
    pub rows: usize,
    #[arg(long, default_value = "gallery")]
    pub out: PathBuf,
    /// Also rasterize the grids to PNG.
    #[arg(long)]
    pub png: bool,
    /// Also sample every random-function family on [-3, 3]².
    #[arg(long)]
    pub functions: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct FilterStatsArgs {
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Write the JSON report here as well as printing the table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    None,
    Sort,
    Isotonic,
}

#[derive(Debug, Args)]
pub struct QdistArgs {
    /// JSON file with 999 quantiles at levels 0.001..0.999, or `{"alphas": [...], "quantiles": [...]}`.
    #[arg(long)]
    pub quantiles: Option<PathBuf>,
    /// Points at which to report CDF, PDF and CRPS.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Vec<f64>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Sort)]
    pub policy: PolicyArg,
    /// Run the four-task validation suite.
    #[arg(long)]
    pub suite: bool,
    #[arg(long, env = "TABPRIOR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    All,
    Standard,
    Ssmax,
    Qassmax,
}

#[derive(Debug, Args)]
pub struct AttnDiagArgs {
    #[arg(long, env = "TABPRIOR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Smallest context length as a power of two.
    #[arg(long, default_value_t = 6)]
    pub min_pow: u32,
    #[arg(long, default_value_t = 14)]
    pub max_pow: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::All)]
    pub mode: ModeArg,
    /// Random key sets per context length.
    #[arg(long, default_value_t = 8)]
    pub trials: usize,
    /// Per-head SSMax scale.
    #[arg(long, default_value_t = 0.4)]
    pub ssmax_scale: f64,
    #[arg(long)]
    pub json: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1024"), Ok((1024, 1024)));
        assert_eq!(parse_range("2..100"), Ok((2, 100)));
        assert_eq!(parse_range("2..=5"), Ok((2, 5)));
        assert!(parse_range("9..3").is_err());
        assert!(parse_range("x").is_err());
    }

    #[test]
    fn filter_flags_toggle() {
        let parse = |extra: &[&str]| {
            let mut argv = vec!["tabprior", "generate"];
            argv.extend_from_slice(extra);
            match Cli::try_parse_from(argv).unwrap().command {
                Command::Generate(g) => g.prior.config().unwrap().filter,
                _ => unreachable!(),
            }
        };
        assert!(parse(&[]));
        assert!(!parse(&["--no-filter"]));
        assert!(parse(&["--no-filter", "--filter"]));
    }
}
