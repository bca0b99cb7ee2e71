//! Command-line driver for the bintrans pipeline.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 data format,
//! 5 numerical failure.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use bintrans_core::{ArchId, OptLevel};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl From<bintrans_core::Error> for CliError {
    fn from(e: bintrans_core::Error) -> Self {
        use bintrans_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config { .. } | E::UnsupportedArch(_) => CliError::Config(msg),
            E::Numerical(_) | E::ZeroVector(_) => CliError::Numerical(msg),
            _ => CliError::Data(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bintrans", version, about = "Unsupervised translation of assembly basic blocks between architectures")]
pub struct Cli {
    /// Configuration file with `[section]` headers and `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set embed.dim=64`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed applied to every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log verbosity (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct StoreArgs {
    /// Root directory of the model store.
    #[arg(long)]
    pub store: PathBuf,
    /// High-resource architecture (translation target).
    #[arg(long, default_value = "x86")]
    pub high: ArchId,
    /// Low-resource architecture.
    #[arg(long, default_value = "arm")]
    pub low: ArchId,
    #[arg(long, default_value = "O0")]
    pub opt: OptLevel,
}

#[derive(Debug, Clone, Args)]
pub struct NormalizeArgs {
    #[arg(long)]
    pub arch: ArchId,
    /// Disassembly listing.
    #[arg(long)]
    pub input: PathBuf,
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    /// `LEVEL=DIR` (or just `DIR`, read as O0); repeatable.
    #[arg(long = "corpus", required = true)]
    pub corpora: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainEmbedArgs {
    #[arg(long)]
    pub corpus_dir: PathBuf,
    #[arg(long)]
    pub arch: ArchId,
    /// Binary embedding file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a text export.
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// `subword` or `word`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub min_count: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct MapArgs {
    /// Low-resource embeddings (mapped side).
    #[arg(long)]
    pub source: PathBuf,
    /// High-resource embeddings (fixed side).
    #[arg(long)]
    pub target: PathBuf,
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub csls_k: Option<usize>,
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainXlateArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Directory holding both architectures' corpora.
    #[arg(long)]
    pub corpus_dir: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Source architecture; the other store side is the target.
    #[arg(long)]
    pub source: ArchId,
    /// Corpus directory with the source functions.
    #[arg(long, required_unless_present = "block")]
    pub corpus_dir: Option<PathBuf>,
    /// Output directory for translated functions.
    #[arg(long, required_unless_present = "block")]
    pub out: Option<PathBuf>,
    /// Translate one block given as space-separated words and print it.
    #[arg(long, conflicts_with_all = ["corpus_dir", "out"])]
    pub block: Option<String>,
    #[arg(long)]
    pub beam: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BleuArgs {
    /// Directory with translated functions.
    #[arg(long)]
    pub candidate: PathBuf,
    /// Directory with reference functions.
    #[arg(long)]
    pub reference: PathBuf,
    /// Architecture of both candidate and reference.
    #[arg(long)]
    pub arch: ArchId,
    /// `candidate_name<TAB>reference_name` pairing; default pairs equal names.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Ground-truth lexicon for token accuracy (needs `--source`).
    #[arg(long, requires = "source")]
    pub oracle: Option<PathBuf>,
    /// Directory with the untranslated source functions.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub source_arch: Option<ArchId>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FuncsimArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Directory holding both architectures' corpora.
    #[arg(long)]
    pub corpus_dir: PathBuf,
    /// Similarity pairs: `f1 arch1 f2 arch2 label`, tab separated.
    #[arg(long)]
    pub pairs: PathBuf,
    /// `raw` or `normalized`.
    #[arg(long)]
    pub tf: Option<String>,
    /// `best`, `fixed:<t>` or `validation:<fraction>`.
    #[arg(long)]
    pub threshold: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VulnTrainArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub corpus_dir: PathBuf,
    /// Architecture of the training functions.
    #[arg(long)]
    pub arch: ArchId,
    /// `name<TAB>0|1` labels, 1 = vulnerable.
    #[arg(long)]
    pub labels: PathBuf,
    /// Detector file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// `smote` or `ros`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub k_neighbors: Option<usize>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct VulnScanArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Detector written by `vuln-train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus_dir: PathBuf,
    #[arg(long)]
    pub arch: ArchId,
    /// Optional ground-truth labels for the metrics table.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ToygenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub swap_p: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a disassembly listing into a normalized corpus.
    Normalize(NormalizeArgs),
    /// Corpus statistics table.
    Stats(StatsArgs),
    /// Train mono-architecture instruction embeddings.
    TrainEmbed(TrainEmbedArgs),
    /// Align two embedding spaces without supervision.
    Map(MapArgs),
    /// Train the translator by denoising and backtranslation.
    TrainXlate(TrainXlateArgs),
    /// Translate blocks or functions.
    Translate(TranslateArgs),
    /// BLEU of translated functions against references.
    Bleu(BleuArgs),
    /// Cross-architecture function similarity accuracy.
    Funcsim(FuncsimArgs),
    /// Train a vulnerability detector on function embeddings.
    VulnTrain(VulnTrainArgs),
    /// Apply a trained detector to functions.
    VulnScan(VulnScanArgs),
    /// Generate synthetic twin corpora with known ground truth.
    Toygen(ToygenArgs),
    /// Run the whole pipeline on synthetic data.
    E2eDemo(DemoArgs),
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("bintrans: {e}");
            e.exit_code()
        }
    }
}
