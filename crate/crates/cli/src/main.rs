//! `uqss` command-line tool.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or config
//! errors. Relative output paths are resolved under `$UQSS_OUT_ROOT` when it
//! is set.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

const GENERATORS: [&str; 4] = ["d1", "d3", "dataset1", "dataset3"];
const PROFILES: [&str; 2] = ["desk", "paper"];

#[derive(Debug, Parser)]
#[command(name = "uqss", version, about = "Prediction intervals from similar samples and sensitivities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV.
    Gen(GenArgs),
    /// Train the full pipeline into a bundle directory.
    Train(TrainArgs),
    /// Predict intervals for the rows of a CSV.
    Predict(PredictArgs),
    /// Score one or more bundles on test data.
    Evaluate(EvaluateArgs),
    /// Show the similar samples of a training anchor or a new input.
    Neighbors(NeighborsArgs),
    /// Sample-density score of an input.
    Density(DensityArgs),
    /// Train and score the direct interval baseline.
    Baseline(BaselineArgs),
    /// Print or check pipeline configs.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator name.
    #[arg(long, value_parser = GENERATORS)]
    pub dataset: String,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; a `<out>.manifest.json` is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Bundle directory; defaults to the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's trial count.
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// CSV holding (at least) the bundle's input columns.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.90)]
    pub nominal: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Bundle directories; several bundles are treated as trials.
    #[arg(long = "bundle", required = true)]
    pub bundles: Vec<PathBuf>,
    /// Test CSV; defaults to each bundle's own `test.csv`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Nominal coverages; defaults to those the bundle was trained for.
    #[arg(long, value_delimiter = ',')]
    pub nominal: Vec<f64>,
    /// Report directory (report.csv, report.json, trials.csv, manifest.json).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NeighborsArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Training row whose stored neighbors to show.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    pub anchor: Option<usize>,
    /// Raw input vector, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub features: Option<Vec<f64>>,
    /// Neighbor table CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plot-ready CSV of two input columns against the target.
    #[arg(long)]
    pub plot_out: Option<PathBuf>,
    /// Input columns for the plot export, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub plot_columns: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub features: Vec<f64>,
    /// JSON result file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Pipeline config supplying dataset and split; otherwise --dataset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generator used when no config is given.
    #[arg(long, default_value = "d1", value_parser = GENERATORS)]
    pub dataset: String,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub data_seed: u64,
    /// Training cost of the interval network.
    #[arg(long, default_value = "cwfdc", value_parser = ["lube", "cwc", "mid", "cwfdc"])]
    pub cost: String,
    #[arg(long, value_delimiter = ',', default_value = "0.90")]
    pub nominal: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value = "desk", value_parser = PROFILES)]
    pub profile: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Print the default config.
    #[arg(long, conflicts_with = "check", required_unless_present = "check")]
    pub dump_defaults: bool,
    /// Network profile for the dumped defaults.
    #[arg(long, default_value = "desk", value_parser = PROFILES)]
    pub profile: String,
    /// Generator for the dumped defaults.
    #[arg(long, default_value = "d1", value_parser = GENERATORS)]
    pub dataset: String,
    /// Validate a config file.
    #[arg(long)]
    pub check: Option<PathBuf>,
    /// Write to a file (with manifest) instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Neighbors(a) => commands::neighbors(&a),
        Command::Density(a) => commands::density(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Config(a) => commands::config(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
