//! `emlabel`: operator entry points for every stage of the labeling pipeline.
//!
//! Exit status is 0 on success, 1 on a usage error (bad flags or flag
//! values) and 2 on a data error (unreadable or invalid input files, failed
//! training, and the like).

mod commands;
mod evaluate;

use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use emlabel_core::datastore::DEFAULT_SEED;

#[derive(Debug, Parser)]
#[command(name = "emlabel", version, about = "Smart Labeling pipeline: ingest, embed, impute, label, simulate, evaluate")]
pub struct Cli {
    /// Seed for every random choice the command makes
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// Directory holding labeling projects
    #[arg(long, global = true, env = "EMLABEL_STATE_DIR", hide_env_values = true, default_value = "state")]
    pub state_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a JSON-lines catalog and report how many objects load
    Ingest(IngestArgs),
    /// Collapse near-duplicate objects to their most complete record
    Dedup(DedupArgs),
    /// Train the autoencoder or apply it to a catalog
    #[command(subcommand)]
    Embed(EmbedCommand),
    /// Fill in missing attributes with iterated attribute heads
    Impute(ImputeArgs),
    /// Run the labeling HTTP service
    Serve(ServeArgs),
    /// Replay the labeling protocol against a synthetic catalog and oracle
    Simulate(SimulateArgs),
    /// Score predictions against ground truth
    Evaluate(EvaluateArgs),
    /// Write a project's per-object probabilities and manual labels
    Export(ExportArgs),
    /// Validate a taxonomy file and, optionally, a catalog against it
    TaxonomyCheck(TaxonomyCheckArgs),
}

#[derive(Debug, Args)]
pub struct CatalogArgs {
    /// JSON-lines catalog, one object per line
    #[arg(long)]
    pub catalog: PathBuf,

    /// Embedding dimension every object must have
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,

    /// Text-embedding coordinates as START:END (default: the whole vector)
    #[arg(long, value_parser = parse_range)]
    pub text_slice: Option<Range<usize>>,

    /// Image-embedding coordinates as START:END (default: the whole vector)
    #[arg(long, value_parser = parse_range)]
    pub image_slice: Option<Range<usize>>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub catalog: CatalogArgs,

    /// Category taxonomy (TSV) every category_path must follow
    #[arg(long)]
    pub categories: Option<PathBuf>,

    /// Write the normalized catalog here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[command(flatten)]
    pub catalog: CatalogArgs,

    /// Image-embedding distance below which two objects are duplicates
    #[arg(long)]
    pub image_eps: f64,

    /// Text-embedding distance below which two objects are duplicates
    #[arg(long)]
    pub text_eps: f64,

    /// Write the deduplicated catalog here
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EmbedCommand {
    /// Train an autoencoder on a catalog's feature vectors
    Train(EmbedTrainArgs),
    /// Replace each object's embedding with its bottleneck encoding
    Apply(EmbedApplyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ActivationArg {
    Linear,
    Tanh,
}

#[derive(Debug, Args)]
pub struct EmbedTrainArgs {
    #[command(flatten)]
    pub catalog: CatalogArgs,

    /// Write the trained model here
    #[arg(long)]
    pub model: PathBuf,

    /// Bottleneck width
    #[arg(long, default_value_t = emlabel_core::embedder::DEFAULT_BOTTLENECK)]
    pub bottleneck: usize,

    /// Material taxonomy (TSV) for the materials block
    #[arg(long)]
    pub materials: Option<PathBuf>,

    /// Category taxonomy (TSV) for the category block
    #[arg(long)]
    pub categories: Option<PathBuf>,

    /// Minibatch size
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,

    /// Training epochs
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,

    /// Learning rate of the first epoch
    #[arg(long, default_value_t = 3e-3)]
    pub lr_start: f64,

    /// Learning rate of the last epoch (geometric decay in between)
    #[arg(long, default_value_t = 3e-7)]
    pub lr_end: f64,

    /// Bottleneck activation
    #[arg(long, value_enum, default_value_t = ActivationArg::Linear)]
    pub activation: ActivationArg,
}

#[derive(Debug, Args)]
pub struct EmbedApplyArgs {
    #[command(flatten)]
    pub catalog: CatalogArgs,

    /// Model written by `embed train`
    #[arg(long)]
    pub model: PathBuf,

    /// Write the re-embedded catalog here
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub catalog: CatalogArgs,

    /// Rounds of fitting heads and refilling missing attributes
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
    pub generations: u32,

    /// Material taxonomy (TSV); enables the materials head
    #[arg(long)]
    pub materials: Option<PathBuf>,

    /// Category taxonomy (TSV); enables the category head
    #[arg(long)]
    pub categories: Option<PathBuf>,

    /// Use the built-in sample taxonomies where no file is given
    #[arg(long)]
    pub sample_taxonomies: bool,

    /// Share of fully observed objects held out for validation
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,

    /// Write the completed catalog here
    #[arg(long)]
    pub out: PathBuf,

    /// Write the per-generation validation report (JSON) here
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub catalog: CatalogArgs,

    /// Address to listen on
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,

    /// Seconds of inactivity after which a project lease lapses
    #[arg(long, default_value_t = 900, value_parser = clap::value_parser!(u64).range(1..))]
    pub lease_ttl_secs: u64,

    /// Unlabeled objects sampled per uncertainty page
    #[arg(long, default_value_t = emlabel_core::engine::DEFAULT_POOL_SIZE)]
    pub pool_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Smart,
    Random,
    Both,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Oracle queries per run
    #[arg(long, default_value_t = 1200)]
    pub budget: usize,

    /// Labeling strategy to replay
    #[arg(long, value_enum, default_value_t = StrategyArg::Both)]
    pub strategy: StrategyArg,

    /// Objects in the synthetic catalog
    #[arg(long, default_value_t = 100_000)]
    pub n_objects: usize,

    /// Embedding dimension of the synthetic catalog
    #[arg(long, default_value_t = 64)]
    pub dim: usize,

    /// Share of truly positive objects
    #[arg(long, default_value_t = 0.02)]
    pub prevalence: f64,

    /// Probability the oracle's answer is flipped
    #[arg(long, default_value_t = 0.02)]
    pub label_noise: f64,

    /// Held-out objects used for scoring
    #[arg(long, default_value_t = 10_000)]
    pub test_size: usize,

    /// Write the learning curves (JSON) here
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    /// Mean of min(p/t, t/p)
    Mnre,
    /// Mean of |ln p - ln t|
    Alde,
    /// Precision, recall, F1 and accuracy of binary labels
    Prf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions: `id<TAB>value` lines (extra columns ignored)
    #[arg(long)]
    pub pred: PathBuf,

    /// Ground truth: `id<TAB>value` lines
    #[arg(long)]
    pub truth: PathBuf,

    /// Metric to compute
    #[arg(long, value_enum)]
    pub metric: MetricArg,

    /// Predictions at or above this count as positive (prf only)
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,

    /// Write the report (JSON) here
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub catalog: CatalogArgs,

    /// Project to export
    #[arg(long)]
    pub project: String,

    /// Write the TSV here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaxonomyField {
    Materials,
    Categories,
}

#[derive(Debug, Args)]
pub struct TaxonomyCheckArgs {
    /// Taxonomy file: `id<TAB>parent<TAB>name<TAB>aliases` lines
    #[arg(long)]
    pub taxonomy: PathBuf,

    /// Catalog to check against the taxonomy
    #[arg(long, requires = "dim")]
    pub catalog: Option<PathBuf>,

    /// Embedding dimension of the catalog
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: Option<u64>,

    /// Which catalog field the taxonomy describes
    #[arg(long, value_enum, default_value_t = TaxonomyField::Materials)]
    pub field: TaxonomyField,

    /// Exit with a data error when any catalog value does not fit
    #[arg(long)]
    pub strict: bool,
}

fn parse_range(s: &str) -> Result<Range<usize>, String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected START:END, got {s:?}"))?;
    let start: usize = a.trim().parse().map_err(|_| format!("bad start in {s:?}"))?;
    let end: usize = b.trim().parse().map_err(|_| format!("bad end in {s:?}"))?;
    if start >= end {
        return Err(format!("empty range {s:?}"));
    }
    Ok(start..end)
}

/// A failed command, split by who has to fix it.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl From<emlabel_core::Error> for Failure {
    fn from(e: emlabel_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(msg) | Failure::Data(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.exit_code())
        }
    }
}
