mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes: 0 success, 1 usage error, 2 data error.
#[derive(Parser)]
#[command(
    name = "recf",
    version,
    about = "Hybrid recommender: word-embedding item descriptions fused with rating factorization"
)]
struct Cli {
    /// Config file with key=value defaults (see the book for keys)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed override; beats the RECF_SEED environment variable and the
    /// config file
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Input format: double-colon, tab, or comma
    #[arg(long, global = true, value_name = "NAME")]
    format: Option<String>,

    /// Suppress progress lines on standard error
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train skip-gram word embeddings and save them
    Embed(EmbedArgs),
    /// Fit the hybrid model on ratings (+ labels + descriptions)
    Train(TrainArgs),
    /// Score one (user, item) pair with a saved model
    Predict(PredictArgs),
    /// Compute MAE/RMSE of a saved model on a held-out rating file
    Evaluate(EvaluateArgs),
    /// Run the full sparsity-sweep protocol and write the report CSV
    Sweep(SweepArgs),
}

#[derive(Args)]
struct EmbedArgs {
    /// Plain-text corpus: one item description per line
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,

    /// Description file (item<sep>title<sep>tags); falls back to the
    /// config's `descriptions` entry
    #[arg(long, value_name = "PATH")]
    descriptions: Option<PathBuf>,

    /// Where to write the word vectors (inner-node vectors go to
    /// <PATH>.nodes)
    #[arg(long, value_name = "PATH")]
    output: PathBuf,

    /// Also dump the vocabulary as token<TAB>count lines
    #[arg(long, value_name = "PATH")]
    vocab_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Rating file; falls back to the config's `ratings` entry
    #[arg(long, value_name = "PATH")]
    ratings: Option<PathBuf>,

    /// Description file; when missing, training degrades to the
    /// no-description model with a warning
    #[arg(long, value_name = "PATH")]
    descriptions: Option<PathBuf>,

    /// Binary label file (user<sep>item<sep>0|1); derived from the
    /// training ratings (like = score > 3) when omitted
    #[arg(long, value_name = "PATH")]
    labels: Option<PathBuf>,

    /// Load pretrained embeddings instead of training them here
    #[arg(long, value_name = "PATH")]
    embeddings: Option<PathBuf>,

    /// Where to write the fitted model (id maps go to <PATH>.users and
    /// <PATH>.items)
    #[arg(long, value_name = "PATH")]
    model_out: PathBuf,

    /// Also write the iteration trace as CSV (iter,lambda_c,objective)
    #[arg(long, value_name = "PATH")]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Model file written by `train`
    #[arg(long, value_name = "PATH")]
    model: PathBuf,

    /// Original user id (dense index when no id map file exists)
    #[arg(long)]
    user: String,

    /// Original item id (dense index when no id map file exists)
    #[arg(long)]
    item: String,

    /// Clamp the score into the rating scale before printing
    #[arg(long)]
    clamp: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model file written by `train`
    #[arg(long, value_name = "PATH")]
    model: PathBuf,

    /// Held-out rating file to score
    #[arg(long, value_name = "PATH")]
    test: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Where to put report.csv and the per-variant plot data
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

/// Failures that are the caller's fault (bad flags or flag combinations)
/// versus failures in the data or the run itself.
pub enum CmdError {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CmdError {
    fn from(e: E) -> Self {
        CmdError::Data(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not errors.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CmdError::Data(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
