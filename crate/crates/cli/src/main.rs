mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::ExportFormat;
use config::RunConfig;
use failure::Failure;

/// Hierarchical topic trees from recursive NMF guided by hyperbolic word
/// embeddings.
#[derive(Debug, Parser)]
#[command(name = "hyptopic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON file with run settings; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tokenize a raw corpus into corpus.bin and vocab.txt.
    Preprocess(RunArgs),
    /// Build the topic tree and write tree.json and provenance.json.
    Train(RunArgs),
    /// Score a trained tree; writes report.json and report.csv.
    Evaluate {
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Re-emit a trained tree as JSON or Graphviz DOT.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        /// Terms kept per topic.
        #[arg(long = "top-k", visible_alias = "top_k")]
        top_k: Option<usize>,
        /// Destination file; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<Option<String>, Failure> {
    match cli.command {
        Command::Preprocess(a) => {
            let cfg = RunConfig::resolve(a.config.as_deref(), &a.run)?;
            commands::preprocess_cmd(&cfg).map(Some)
        }
        Command::Train(a) => {
            let cfg = RunConfig::resolve(a.config.as_deref(), &a.run)?;
            commands::train_cmd(&cfg, &a.run).map(Some)
        }
        Command::Evaluate { model, args } => {
            let cfg = RunConfig::resolve(args.config.as_deref(), &args.run)?;
            commands::evaluate_cmd(&model, &cfg).map(Some)
        }
        Command::Export {
            model,
            format,
            top_k,
            output,
        } => commands::export_cmd(&model, format, top_k, output.as_deref()).map(|_| None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            if let Some(line) = summary {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
