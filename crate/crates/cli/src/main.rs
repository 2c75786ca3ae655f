mod commands;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "codeattn", version, about = "Instrumented BERT-style encoder for Java source code")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Strip comments, split lines, lex a directory of .java files and train a vocabulary.
    Prepare(CommonArgs),
    /// Pretrain the encoder with MLM + NSP and write a checkpoint.
    Pretrain(CommonArgs),
    /// Run all attention analyses and write one CSV per analysis.
    Analyze(CommonArgs),
    /// Mask each syntactic type in turn and score the MLM predictions.
    Probe(CommonArgs),
    /// Clone detection sweep over every layer with [CLS] and identifier embeddings.
    Clone(CommonArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mass,
    Occurrence,
    Both,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EmbeddingArg {
    Cls,
    Idf,
    Both,
}

/// Flags shared by every subcommand. Unset flags fall back to `--config`,
/// then to built-in defaults.
#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// Corpus: a directory of .java files for `prepare`, a prepared corpus directory otherwise.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    embedding: Option<EmbeddingArg>,
    /// key=value settings file; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the built-in 50-function toy corpus (`prepare` only).
    #[arg(long)]
    toy: bool,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Tab-separated clone pair file; a synthetic set is generated when absent.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Size of the synthetic clone set.
    #[arg(long)]
    size: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(args) => commands::prepare(&args),
        Command::Pretrain(args) => commands::pretrain(&args),
        Command::Analyze(args) => commands::analyze(&args),
        Command::Probe(args) => commands::probe(&args),
        Command::Clone(args) => commands::clone(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
