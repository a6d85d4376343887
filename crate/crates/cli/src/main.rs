mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use agdst::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "agdst", version, about = "Two-pass generative dialogue state tracking")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CorpusFormat {
    Canonical,
    MultiwozLike,
    WozLike,
}

#[derive(Args, Clone)]
pub struct CorpusArgs {
    /// Corpus file.
    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long, value_enum, default_value = "canonical")]
    pub format: CorpusFormat,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitChoice {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus in canonical JSON.
    GenData {
        /// Generator spec (JSON); built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt, vocab.txt, run_config.json and train_log.jsonl.
    Train {
        /// Run configuration (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        /// Train once per seed into `seed-<n>` subdirectories.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Track a corpus split and write per-turn predictions (JSON lines).
    Predict {
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
        /// Replace basic-pass outputs with corrupted gold states and only amend.
        #[arg(long, conflicts_with = "gold_conditioning")]
        corrupt_primitives: bool,
        #[arg(long, default_value_t = 0)]
        corrupt_seed: u64,
        /// Condition each turn on the gold previous state (diagnostics).
        #[arg(long)]
        gold_conditioning: bool,
    },
    /// Score predictions against the gold corpus.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        /// Edit-distance ratio for near-miss generation errors.
        #[arg(long, default_value_t = agdst::eval::NEAR_MISS_THRESHOLD)]
        threshold: f64,
    },
    /// Dump attention maps of both passes for one dialogue.
    InspectAttention {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        dialogue: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, predict and evaluate every ablation variant of a configuration.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numeric { .. } => 3,
        Error::Io { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let result = match cli.command {
        Command::GenData { spec, out } => commands::gen_data(spec.as_deref(), &out),
        Command::Train {
            config,
            corpus,
            out,
            seeds,
        } => commands::train(config.as_deref(), &corpus, &out, &seeds),
        Command::Predict {
            model,
            corpus,
            out,
            split,
            corrupt_primitives,
            corrupt_seed,
            gold_conditioning,
        } => {
            let mode = if corrupt_primitives {
                commands::PredictMode::CorruptPrimitives { seed: corrupt_seed }
            } else if gold_conditioning {
                commands::PredictMode::GoldConditioning
            } else {
                commands::PredictMode::Predicted
            };
            commands::predict(&model, &corpus, &out, split, mode)
        }
        Command::Eval {
            predictions,
            corpus,
            out,
            threshold,
        } => commands::eval(&predictions, &corpus, &out, threshold),
        Command::InspectAttention {
            model,
            corpus,
            dialogue,
            out,
        } => commands::inspect_attention(&model, &corpus, &dialogue, &out),
        Command::Ablate { config, corpus, out } => commands::ablate(config.as_deref(), &corpus, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
