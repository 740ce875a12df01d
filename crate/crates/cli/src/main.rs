//! `forge`: composable subcommands over the dataset pipeline.
//!
//! Conventions: data goes to files, diagnostics and the resolved config go
//! to stderr, stdout stays clean. Exit codes: 0 success, 1 validation
//! error, 2 I/O error.

mod commands;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use forge_core::Error;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (dataset format v1, index format v1)"
);

#[derive(Parser)]
#[command(name = "forge", about, version = VERSION)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, validate, and filter a raw record file into a clean corpus.
    Ingest(commands::IngestArgs),
    /// Build a BM25 index over a corpus.
    Index(commands::IndexArgs),
    /// Assemble per-page option sets from diffdx edges and retrieval.
    Distract(commands::DistractArgs),
    /// Generate a masked MCQA dataset.
    Generate(commands::GenerateArgs),
    /// Audit a dataset for answer leakage.
    Audit(commands::AuditArgs),
    /// Evaluate a distractor ranker against diffdx gold edges.
    #[command(name = "eval-retrieval")]
    EvalRetrieval(commands::EvalRetrievalArgs),
    /// Concatenate top-k retrieved passages to each question.
    Augment(commands::AugmentArgs),
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Usage problems are validation errors (exit 1); --help and
            // --version are successful runs.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Ingest(args) => commands::ingest(args),
        Command::Index(args) => commands::index(args),
        Command::Distract(args) => commands::distract(args),
        Command::Generate(args) => commands::generate(args),
        Command::Audit(args) => commands::audit(args),
        Command::EvalRetrieval(args) => commands::eval_retrieval(args),
        Command::Augment(args) => commands::augment(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
