use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

/// Route-choice learning toolkit: synthetic data generation, shortest-path
/// routing, residual-model training, evaluation, and sparsity sweeps.
#[derive(Parser)]
#[command(name = "routelearn", version, about)]
struct Cli {
    /// Base seed for generation, splits, and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Key-value config file overriding the built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city, traffic, and routes into a directory.
    Datagen {
        /// Output directory for roadnet.json, traffic.csv, routes.jsonl,
        /// and manifest.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train the residual model on a generated dataset.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Checkpoint file to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Evaluate methods on the test split and print a metric CSV.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Comma-separated methods: di-dis, di-time, astar, nn, lfd, l2r.
        #[arg(long, default_value = "di-dis,di-time,astar,nn,lfd,l2r")]
        methods: String,
        /// Reuse a trained checkpoint for l2r instead of training in-process.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Compute one route for a query with a classical method.
    Route {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// One of: di-dis, di-time, astar.
        #[arg(long)]
        method: String,
        #[arg(long)]
        origin: usize,
        #[arg(long)]
        destination: usize,
        /// Departure time interval.
        #[arg(long, default_value_t = 0)]
        interval: usize,
    },
    /// Run the data-sparsity sweep and write sweep.csv, long.csv,
    /// summary.json.
    Sweep {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value = "di-dis,di-time,astar,nn,lfd,l2r")]
        methods: String,
    },
    /// Project a soft route (JSON array of M probabilities) onto a valid
    /// path.
    ValidateSoft {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// JSON file holding an array of M edge probabilities.
        #[arg(long, value_name = "PATH")]
        probs: PathBuf,
        #[arg(long)]
        origin: usize,
        #[arg(long)]
        destination: usize,
        #[arg(long, default_value_t = 0)]
        interval: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // One machine-readable error line on failure.
            eprintln!(
                "{}",
                serde_json::json!({ "error": format!("{err:#}") })
            );
            ExitCode::FAILURE
        }
    }
}

impl Cli {
    fn app_config(&self) -> anyhow::Result<routelearn::experiment::AppConfig> {
        let mut config = match &self.config {
            Some(path) => routelearn::experiment::AppConfig::load(path)?,
            None => routelearn::experiment::AppConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}
