mod commands;

use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Refine model summaries with written feedback, evaluate the results and
/// finetune on the refinements.
#[derive(Parser, Debug)]
#[command(name = "feedloop", version)]
struct Cli {
    /// Backend configuration (TOML). FEEDLOOP_* variables override it.
    #[arg(long, global = true, env = "FEEDLOOP_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DataDir {
    /// Directory holding tasks.jsonl, outputs.jsonl, feedback.jsonl, ...
    #[arg(long, env = "FEEDLOOP_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,

    /// Directory of `<tag>.txt` prompt templates overriding the defaults
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an initial summary for every task that lacks one
    Summarize {
        #[command(flatten)]
        data: DataDir,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Sample refinements of the initial summaries and select one per task
    Refine {
        #[command(flatten)]
        data: DataDir,
        #[arg(long, default_value = "best_of_n")]
        strategy: String,
        /// Candidates sampled per task
        #[arg(short = 'n', long, default_value_t = feedloop_core::DEFAULT_CANDIDATES)]
        candidates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Synthetic word-removal benchmark
    #[command(subcommand)]
    Bench(BenchCommand),

    /// Win rates from ranking files and incorporation rates from judgments
    Analyze {
        #[arg(long)]
        rankings: Option<PathBuf>,
        #[arg(long)]
        judgments: Option<PathBuf>,
        /// Method pair `a:b`; repeatable
        #[arg(long = "pair", value_name = "A:B")]
        pairs: Vec<String>,
        /// Bucket this method's win rate over the initial summary by the
        /// initial summary's rank
        #[arg(long, value_name = "METHOD")]
        by_initial_rank: Option<String>,
        /// Method tags to report incorporation for
        #[arg(long = "method")]
        methods: Vec<String>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
        format: OutputFormat,
        /// Output file for csv and plot formats
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Write the finetuning dataset built from selected refinements
    Export {
        #[command(flatten)]
        data: DataDir,
        #[arg(long, default_value = "best_of_n")]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
    },

    /// Cross-validated hyperparameter sweep over a dataset
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = feedloop_core::finetune::DEFAULT_FOLDS)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint file; an interrupted sweep resumes from it
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long, default_value_t = feedloop_pipeline::sweep::DEFAULT_PARALLELISM)]
        parallelism: usize,
        #[arg(long, default_value_t = 30)]
        poll_secs: u64,
        /// Comma-separated learning rate multipliers
        #[arg(long, value_delimiter = ',')]
        learning_rates: Option<Vec<f64>>,
        /// Comma-separated prompt loss weights
        #[arg(long, value_delimiter = ',')]
        prompt_loss_weights: Option<Vec<f64>>,
        /// Where to write the result table (JSON)
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Submit the final finetuning job
    Finetune {
        #[arg(long)]
        dataset: PathBuf,
        /// Sweep result written by `sweep --out`
        #[arg(long, conflicts_with_all = ["learning_rate_multiplier", "prompt_loss_weight"])]
        sweep: Option<PathBuf>,
        #[arg(long, requires = "prompt_loss_weight")]
        learning_rate_multiplier: Option<f64>,
        #[arg(long, requires = "learning_rate_multiplier")]
        prompt_loss_weight: Option<f64>,
        /// Write the job record here
        #[arg(long)]
        record: Option<PathBuf>,
        /// Poll until the job finishes
        #[arg(long)]
        wait: bool,
        #[arg(long, default_value_t = 30)]
        poll_secs: u64,
    },

    /// Run the annotation service
    Serve {
        #[arg(long, env = "FEEDLOOP_DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, env = "FEEDLOOP_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "FEEDLOOP_HOST", default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        /// Built UI bundle to serve at `/`
        #[arg(long, env = "FEEDLOOP_STATIC_DIR")]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Write benchmark instances
    Generate {
        /// One word per line; defaults to the built-in placeholder list
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = feedloop_core::word_removal::DEFAULT_SENTENCES_PER_K)]
        per_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Query the configured backend on every instance
    Run {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Exact-match accuracy table, one row per predictions file
    Score {
        #[arg(long)]
        instances: PathBuf,
        /// `tag=predictions.jsonl`; repeatable
        #[arg(long = "run", value_name = "TAG=PATH", required = true)]
        runs: Vec<String>,
        /// Print per-run reports as JSON instead of the table
        #[arg(long)]
        json: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum OutputFormat {
    Table,
    Csv,
    Plot,
    Json,
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    commands::run(cli).await
}
