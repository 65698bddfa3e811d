//! `qrewrite` — reproducible pipelines over the query rewriting engine:
//! synthetic data generation, pretraining and fine-tuning, index building,
//! retrieval, evaluation, ratio sweeps, and gradient checking.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Command failure with its process exit code: 1 validation, 2 runtime or
/// I/O, 3 acceptance-check failure.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
    pub fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
    pub fn check(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<qrewrite_core::Error> for Failure {
    fn from(e: qrewrite_core::Error) -> Self {
        match e {
            qrewrite_core::Error::Validation(_) => Failure::validation(e.to_string()),
            other => Failure::runtime(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "qrewrite",
    about = "Retrieval-based query rewriting: train, index, retrieve, evaluate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic session corpus with gold rewrite pairs.
    Datagen {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for sessions.jsonl, gold_pairs.tsv,
        /// candidates.jsonl, eval_cases.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Pretrain the encoder on session logs (next-turn prediction).
    Pretrain {
        #[command(flatten)]
        common: CommonArgs,
        /// Utterance records (sessions.jsonl).
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `text` or `text_nlu` (jointly with serialized hypotheses).
        #[arg(long, default_value = "text")]
        mode: String,
        /// Cap on training epochs (overrides the config).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the encoder from scratch on rewrite pairs.
    TrainBaseline {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Vocabulary file; built from the pairs when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Fraction of the pair set to train on.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fine-tune a pretrained checkpoint on rewrite pairs.
    Finetune {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        init_checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Vocabulary file; defaults to vocab.txt next to the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Encode candidates offline and build the retrieval index.
    BuildIndex {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Output index file.
        #[arg(long)]
        out: PathBuf,
        /// Also build the coarse partition for approximate search.
        #[arg(long)]
        partition: bool,
    },
    /// Retrieve the top-k rewrites for one query.
    Query {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Query text.
        #[arg(long)]
        text: String,
        #[arg(short, long, default_value_t = 20)]
        k: usize,
        /// Probe this many inverted lists instead of scanning exhaustively.
        #[arg(long)]
        probe: Option<usize>,
    },
    /// Score retrieval quality on an evaluation set; writes metrics.json.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Output metrics file.
        #[arg(long)]
        out: PathBuf,
        #[arg(short, long, default_value_t = 20)]
        k: usize,
    },
    /// Train baseline and fine-tuned arms over a grid of pair-set ratios.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated ratios in (0, 1], e.g. 0.05,0.2,1.0.
        #[arg(long, default_value = "0.05,0.1,0.2,0.5,1.0")]
        ratios: String,
        /// Pretraining flavor: `text` or `text_nlu`.
        #[arg(long, default_value = "text")]
        mode: String,
        #[arg(short, long, default_value_t = 20)]
        k: usize,
    },
    /// Verify analytic gradients against finite differences; exits 3 on
    /// disagreement beyond 1e-4 relative error.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Datagen { common, out, force } => commands::datagen(&common, &out, force),
        Command::Pretrain {
            common,
            sessions,
            out,
            mode,
            epochs,
        } => commands::pretrain(&common, &sessions, &out, &mode, epochs),
        Command::TrainBaseline {
            common,
            pairs,
            out,
            vocab,
            ratio,
            epochs,
        } => commands::train_baseline(&common, &pairs, &out, vocab.as_deref(), ratio, epochs),
        Command::Finetune {
            common,
            pairs,
            init_checkpoint,
            out,
            vocab,
            ratio,
            epochs,
        } => commands::finetune(
            &common,
            &pairs,
            &init_checkpoint,
            &out,
            vocab.as_deref(),
            ratio,
            epochs,
        ),
        Command::BuildIndex {
            common,
            candidates,
            checkpoint,
            vocab,
            out,
            partition,
        } => commands::build_index(
            &common,
            &candidates,
            &checkpoint,
            vocab.as_deref(),
            &out,
            partition,
        ),
        Command::Query {
            common,
            index,
            checkpoint,
            vocab,
            text,
            k,
            probe,
        } => commands::query(&common, &index, &checkpoint, vocab.as_deref(), &text, k, probe),
        Command::Evaluate {
            common,
            cases,
            index,
            checkpoint,
            vocab,
            out,
            k,
        } => commands::evaluate(
            &common,
            &cases,
            &index,
            &checkpoint,
            vocab.as_deref(),
            &out,
            k,
        ),
        Command::Sweep {
            common,
            pairs,
            sessions,
            cases,
            candidates,
            out,
            ratios,
            mode,
            k,
        } => commands::sweep(
            &common, &pairs, &sessions, &cases, &candidates, &out, &ratios, &mode, k,
        ),
        Command::Gradcheck { common, eps } => commands::gradcheck(&common, eps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
