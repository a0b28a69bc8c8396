use std::net::SocketAddr;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use ecannot_core::agents::Mode;
use ecannot_core::dataset::Task;
use ecannot_core::embedding::EmbeddingKind;

#[derive(Debug, Parser)]
#[command(
    name = "ecannot",
    version,
    about = "Enzyme function annotation from protein sequences"
)]
pub struct Cli {
    /// Log filter (e.g. info, debug); RUST_LOG takes precedence.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic pair of snapshots plus a query FASTA.
    Synth(SynthArgs),
    /// Clean two snapshot extracts and build the three chronological datasets.
    Prepare(PrepareArgs),
    /// Produce an embedding table for a flat file or FASTA.
    Embed(EmbedArgs),
    /// Train all agents and write a model bundle.
    Train(TrainArgs),
    /// Annotate a FASTA file with a model bundle.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Tune the integration policy on the latest slice of the training data.
    Tune(TuneArgs),
    /// Run the HTTP job service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 24)]
    pub enzyme_families: usize,
    #[arg(long, default_value_t = 16)]
    pub non_enzyme_families: usize,
    #[arg(long, default_value_t = 10)]
    pub members: usize,
    /// Records integrated on or before this date go to the older snapshot.
    #[arg(long, default_value = "2018-02-28")]
    pub cutoff: NaiveDate,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Older snapshot extract (TSV, optionally gzipped).
    #[arg(long)]
    pub train: PathBuf,
    /// Newer snapshot extract.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Release date of the older snapshot.
    #[arg(long, default_value = "2018-02-28")]
    pub cutoff: NaiveDate,
    /// Release date of the newer snapshot; defaults to its latest record date.
    #[arg(long)]
    pub test_date: Option<NaiveDate>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Flat-file extracts or FASTA files; an id seen twice keeps its first sequence.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Built-in one-hot encoding (the only in-process embedder).
    #[arg(long, required = true)]
    pub one_hot: bool,
    #[arg(long, default_value_t = ecannot_core::embedding::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Write the TSV form instead of the binary container.
    #[arg(long)]
    pub tsv: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Output directory of `prepare` (its ds1_train.tsv is used) or a flat file.
    #[arg(long)]
    pub data: PathBuf,
    /// Embedding table covering every training record.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Provenance tag of a TSV embedding table (binary tables carry their own).
    #[arg(long, default_value = "custom:external")]
    pub kind: EmbeddingKind,
    /// Bundle directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training configuration (missing fields take defaults).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Integration policy JSON, e.g. from `tune`.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Tune the policy on a holdout before the final fit.
    #[arg(long)]
    pub tune: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub fasta: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "prediction")]
    pub mode: Mode,
    /// Precomputed embeddings for the queries (required unless the bundle
    /// uses one-hot encoding).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction TSV (this tool's output or the 3-column external form).
    #[arg(long, required_unless_present = "counts")]
    pub predictions: Option<PathBuf>,
    /// Gold flat file.
    #[arg(long, required_unless_present = "counts")]
    pub gold: Option<PathBuf>,
    #[arg(long, default_value = "enzyme")]
    pub task: Task,
    /// Label dictionary; gold records with ECs outside it are excluded.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Score named confusion-count rows (name, tp, fp, tn, fn, up, un) instead.
    #[arg(long, conflicts_with_all = ["predictions", "gold"])]
    pub counts: Option<PathBuf>,
    /// Exit with status 3 when the headline F1 falls below this value.
    #[arg(long)]
    pub min_f1: Option<f64>,
    /// Report TSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Provenance tag of a TSV embedding table (binary tables carry their own).
    #[arg(long, default_value = "custom:external")]
    pub kind: EmbeddingKind,
    /// Directory for policy.json and scoreboard.tsv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, env = "ECANNOT_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, env = "ECANNOT_STORE", default_value = "jobs")]
    pub store: PathBuf,
    /// Concurrent jobs; defaults to the CPU count.
    #[arg(long, env = "ECANNOT_WORKERS")]
    pub workers: Option<usize>,
    /// Delete finished jobs older than this many seconds.
    #[arg(long, env = "ECANNOT_TTL_SECS")]
    pub ttl_secs: Option<u64>,
}
