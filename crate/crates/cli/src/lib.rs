//! `ips` command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ips_core::HyperPolicy;

mod commands;

pub use commands::{benchmark, eval, serve, simulate, train};

#[derive(Debug, Parser)]
#[command(name = "ips", version, about = "WiFi fingerprinting indoor positioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a reference-point survey and write it as JSONL.
    Simulate(SimulateArgs),
    /// Fit per-cell distributions and densify them into a radio map.
    Train(TrainArgs),
    /// Simulate, train and evaluate end to end; print metrics JSON.
    Benchmark(BenchmarkArgs),
    /// Serve the HTTP API over a data directory.
    Serve(ServeArgs),
    /// Localize observations with known positions and report the errors.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON file [default: built-in 14 m x 14 m benchmark room]
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output directory for samples.jsonl, area.json and scenario.json
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Reference-point spacing in metres (interior grid)
    #[arg(long, default_value_t = 1.0)]
    pub rp_spacing: f64,
    /// Scans per reference point and heading
    #[arg(long, default_value_t = 50)]
    pub scans_per_cell: usize,
    /// RNG seed [default: the scenario's seed, 0 for the built-in room]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write this many random test observations to test_points.jsonl
    #[arg(long, default_value_t = 0)]
    pub test_points: usize,
    /// Put the true heading in each test observation
    #[arg(long)]
    pub heading_known: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Survey samples (JSONL)
    #[arg(long)]
    pub samples: PathBuf,
    /// Survey area JSON (as written by `ips simulate`)
    #[arg(long)]
    pub area: PathBuf,
    /// Output directory for sparse_map.json, radiomap.json and report.json
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Radio map grid spacing in metres
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    /// GPR hyperparameters: fixed or grid-search
    #[arg(long, default_value_t = HyperPolicy::Fixed)]
    pub hyper_policy: HyperPolicy,
    /// Fraction of scans an AP must appear in to be kept for a cell
    #[arg(long, default_value_t = ips_core::distribution::DEFAULT_MIN_PRESENCE)]
    pub min_presence: f64,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// BenchmarkConfig JSON; flags given on the command line override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario JSON file [default: built-in 14 m x 14 m benchmark room]
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Reference-point spacing in metres [default: 1]
    #[arg(long)]
    pub rp_spacing: Option<f64>,
    /// Scans per reference point and heading [default: 50]
    #[arg(long)]
    pub scans_per_cell: Option<usize>,
    /// Random test observations [default: 200]
    #[arg(long)]
    pub test_points: Option<usize>,
    /// Radio map grid spacing in metres [default: 1]
    #[arg(long)]
    pub grid_spacing: Option<f64>,
    /// fixed or grid-search [default: grid-search]
    #[arg(long)]
    pub hyper_policy: Option<HyperPolicy>,
    /// RNG seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override every AP's shadowing sigma (dB)
    #[arg(long)]
    pub shadowing_std: Option<f64>,
    /// Directory for metrics.json, accuracy.csv and report.json
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding session data
    #[arg(long)]
    pub data_dir: PathBuf,
    /// TCP port
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Address to bind
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained radiomap.json
    #[arg(long)]
    pub radiomap: PathBuf,
    /// JSONL of {"observation": …, "x": …, "y": …}
    #[arg(long)]
    pub observations: PathBuf,
    /// Output directory for accuracy.csv and accuracy.json
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Cells in the position centroid
    #[arg(long, default_value_t = ips_core::localizer::DEFAULT_TOP_K)]
    pub k: usize,
    /// Minimum APs shared with the radio map
    #[arg(long, default_value_t = ips_core::localizer::DEFAULT_MIN_MATCH)]
    pub min_match: usize,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train(&a),
        Command::Benchmark(a) => benchmark(&a),
        Command::Serve(a) => serve(&a),
        Command::Eval(a) => eval(&a),
    }
}
