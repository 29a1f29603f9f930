mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use merit_core::{Error, ErrorClass};
use serde_json::json;

/// Training-free knowledge tracing: schema discovery, paradigm memory and
/// constrained prediction.
#[derive(Debug, Parser)]
#[command(name = "merit", version, about)]
pub struct Cli {
    /// TOML configuration file; omitted keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for projection and sampling; overrides `seed` in the config.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Embedding and language-model backend.
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderArg>,
    /// Only print results and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Remote,
    Offline,
}

#[derive(Debug, Args)]
pub struct ArtifactDir {
    /// Directory holding pipeline artifacts.
    #[arg(long, default_value = "artifacts", value_name = "DIR")]
    pub artifacts: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub no_retrieval: bool,
    #[arg(long)]
    pub no_routing: bool,
    #[arg(long)]
    pub no_traces: bool,
    #[arg(long)]
    pub no_logic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an interaction CSV, filter, split, and write train/test sequences.
    Ingest {
        /// Interaction log with student_id,timestamp,item_id,exercise_text,concept_tags,correct.
        input: PathBuf,
        #[command(flatten)]
        dir: ArtifactDir,
    },
    /// Fit cognitive schemas on the training split and persist the model.
    DiscoverSchemas {
        #[command(flatten)]
        dir: ArtifactDir,
        /// Also write a 2-D projection CSV for plotting.
        #[arg(long)]
        plot: bool,
    },
    /// Select and annotate prototypes into the memory bank.
    BuildBank {
        #[command(flatten)]
        dir: ArtifactDir,
    },
    /// Build per-schema retrieval indices for the bank.
    Index {
        #[command(flatten)]
        dir: ArtifactDir,
    },
    /// Predict the final interaction of one sequence (JSON from a file or stdin).
    Predict {
        /// Sequence JSON; `-` or omitted reads stdin.
        input: Option<PathBuf>,
        #[command(flatten)]
        dir: ArtifactDir,
        #[command(flatten)]
        ablation: AblationArgs,
        /// Also print the rendered prompt to stderr.
        #[arg(long)]
        show_prompt: bool,
    },
    /// Predict the test split and report AUC/ACC/F1.
    Evaluate {
        #[command(flatten)]
        dir: ArtifactDir,
        /// Run the whole pipeline in memory from this CSV instead of reading artifacts.
        #[arg(long, value_name = "CSV")]
        data: Option<PathBuf>,
        /// Where report.json and predictions.csv go (default: the artifact dir).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationArgs,
    },
    /// Evaluate the full pipeline and each single-component ablation.
    Ablate {
        #[command(flatten)]
        dir: ArtifactDir,
        #[arg(long, value_name = "CSV")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> (u8, &'static str, &'static str) {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) => match e.class() {
            ErrorClass::Data => (2, "data", e.code()),
            ErrorClass::Provider => (3, "provider", e.code()),
        },
        None => (2, "data", "Other"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    commands::init_logging(cli.quiet);
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, class, kind) = exit_code(&err);
            let causes: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
            let body = json!({
                "error": kind,
                "class": class,
                "message": err.to_string(),
                "causes": causes,
            });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
