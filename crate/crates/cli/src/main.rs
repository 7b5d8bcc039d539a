mod cmd;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad input from the user: exits with status 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser, Debug)]
#[command(name = "ctlab", version, about = "Communal-violence text classification workbench")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for all outputs
    #[arg(short, long = "out", global = true)]
    pub out: Option<PathBuf>,
    /// Root seed for every random stream
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Normalize a corpus, optionally adding paraphrases and merging batches
    Prep(cmd::PrepArgs),
    /// Write a stratified train/val/test split
    Split(cmd::SplitArgs),
    /// Train a classifier and write its checkpoint and history
    Train(cmd::TrainArgs),
    /// Score texts with a checkpoint
    Predict(cmd::PredictArgs),
    /// Score texts with a five-member ensemble
    Ensemble(cmd::EnsembleArgs),
    /// Compare predictions against gold labels
    Eval(cmd::EvalArgs),
    /// Explain one prediction with a local surrogate model
    Explain(cmd::ExplainArgs),
    /// Frequent words, embedding similarity and trigger coverage
    Diagnose(cmd::DiagnoseArgs),
    /// Select candidate comments from an external corpus
    Mine(cmd::MineArgs),
    /// Run the blind-voting annotation service
    AnnotateServe(cmd::ServeArgs),
    /// Export accepted annotations as a corpus batch
    ExportAnnotations(cmd::ExportArgs),
}

/// 1 for input problems, 2 for everything else.
fn exit_status(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Invalid>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<ctlab_core::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<ctlab_annotate::AnnotateError>() {
            return match e {
                ctlab_annotate::AnnotateError::Validation(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match cmd::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
