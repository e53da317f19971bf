mod chat;
mod commands;
mod config;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use asem::corpus::DatasetTag;
use clap::{ArgAction, Parser, Subcommand};

use commands::{EvalArgs, GenerateArgs, Globals, PrepSource};
use data::SplitChoice;

/// Empathetic dialogue with sentiment experts and emotion listeners.
#[derive(Parser)]
#[command(name = "asem", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map a raw dialogue file (or a synthetic corpus) onto coarse emotions.
    Prep {
        /// Raw CSV or JSONL dialogue file.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Generate this many synthetic examples instead.
        #[arg(long, conflicts_with = "input")]
        synthetic: Option<usize>,
        #[arg(long, default_value = "ED")]
        dataset: DatasetTag,
        /// Topic words in the synthetic corpus.
        #[arg(long, default_value_t = 50)]
        topics: usize,
        /// Filler words in synthetic history turns.
        #[arg(long, default_value_t = 200)]
        filler: usize,
    },
    /// Train a model; writes best.ckpt, last.ckpt and train_log.jsonl.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compute the metric report for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
        /// Word vectors for the cosine metric; defaults to the model's own.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Train the full model and ablated variants, then compare them.
    Ablate {
        /// Comma-separated variant names; all when omitted.
        #[arg(long, value_delimiter = ',')]
        ablations: Vec<String>,
    },
    /// Produce responses for a corpus split or for one context.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
        /// A context turn, oldest first; the last one is answered.
        #[arg(long = "turn")]
        turns: Vec<String>,
        /// Greedy decoding instead of beam search.
        #[arg(long)]
        greedy: bool,
    },
    /// Talk to a model in the terminal.
    Chat {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let g = Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    let result = match &cli.command {
        Command::Prep {
            input,
            synthetic,
            dataset,
            topics,
            filler,
        } => commands::prep(
            &g,
            &PrepSource {
                input: input.clone(),
                synthetic: *synthetic,
                topics: *topics,
                filler: *filler,
            },
            *dataset,
        ),
        Command::Train { resume } => commands::train(&g, resume.as_deref()),
        Command::Eval {
            checkpoint,
            corpus,
            split,
            embeddings,
        } => commands::eval(
            &g,
            &EvalArgs {
                checkpoint: checkpoint.as_deref(),
                corpus: corpus.as_deref(),
                split: *split,
                embeddings: embeddings.as_deref(),
            },
        ),
        Command::Ablate { ablations } => commands::ablate(&g, ablations),
        Command::Generate {
            checkpoint,
            corpus,
            split,
            turns,
            greedy,
        } => commands::generate(
            &g,
            &GenerateArgs {
                checkpoint: checkpoint.as_deref(),
                corpus: corpus.as_deref(),
                split: *split,
                turns,
                greedy: *greedy,
            },
        ),
        Command::Chat { checkpoint } => commands::chat(&g, checkpoint.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
