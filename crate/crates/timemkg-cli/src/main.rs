//! Command-line pipeline: build the knowledge graph, embed prompts,
//! train, evaluate, forecast, classify, export attention matrices, and
//! generate synthetic benchmarks.
//!
//! Every command prints a single-line JSON summary on success and a
//! machine-readable JSON error object on stderr with a nonzero exit code
//! otherwise. `--set section.key=value` flags override config-file values.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "timemkg", version, about = "Knowledge-graph-guided multivariate time-series modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a triplet file into a deduplicated graph file.
    BuildKg {
        /// Input triplets (JSON Lines).
        triplets_in: PathBuf,
        /// Output graph (normalized JSON Lines).
        graph_out: PathBuf,
    },
    /// Embed every variable's prompt and persist the vector store.
    Embed {
        #[arg(long)]
        config: PathBuf,
        /// Override config-file values, e.g. --set train.seed=7.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        /// Store file to write.
        #[arg(long)]
        out: PathBuf,
        /// Source the compression weights from a trained checkpoint
        /// instead of the seeded initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint plus loss curve.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        /// Checkpoint file to write.
        #[arg(long)]
        checkpoint_out: PathBuf,
        /// Optional CSV loss curve destination.
        #[arg(long)]
        loss_curve_out: Option<PathBuf>,
        /// Optional JSON metrics destination.
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a data split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to score: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Forecast from a history CSV (exactly the configured history length).
    Forecast {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// History window CSV with the training-time variable columns.
        #[arg(long)]
        history: PathBuf,
        /// Forecast CSV to write (horizon rows, named columns).
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify a history CSV window.
    Classify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        history: PathBuf,
    },
    /// Export per-layer and fusion attention matrices as CSV.
    ExportAttention {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Window index within the chosen split.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, default_value = "test")]
        split: String,
        /// Directory for the CSV files.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic series and its ground-truth triplets.
    Synth {
        /// Generator spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        data_out: PathBuf,
        #[arg(long)]
        triplets_out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let payload = serde_json::json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
