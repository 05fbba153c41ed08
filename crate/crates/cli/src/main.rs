//! `solarbatt`: ingest smart-meter data, train and evaluate battery agents,
//! sweep battery sizes, tune hyperparameters and export plot data.
//!
//! Exit status is 0 on success, 2 for configuration problems and missing
//! inputs, 1 for runtime failures. Failures print one JSON object on stderr:
//! `{"error":"<class>","path":"<config key or null>","message":"..."}`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use solarbatt::Error;

#[derive(Parser, Debug)]
#[command(name = "solarbatt", version, about = "Solar battery dispatch experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML). A previous run's manifest.toml works too.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set hyperparams.gamma=0.95`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory [default: $SOLARBATT_OUT/<command>, or runs/<command>].
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse an Ausgrid CSV into normalized per-household files and report
    /// complete weeks and the train/test split.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Ausgrid CSV [default: data.path from the configuration].
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train one agent and evaluate it on the test weeks.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a saved checkpoint on the configured test weeks.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate one agent per battery size.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Run the hyperparameter search and write the ranked trial table.
    Tune {
        #[command(flatten)]
        common: Common,
    },
    /// Perfect-foresight, greedy and no-battery costs of every week.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Turn a sweep directory into figure-ready tables.
    ExportPlots {
        #[command(flatten)]
        common: Common,
        /// Sweep output directory.
        #[arg(long)]
        run: PathBuf,
    },
}

fn exit_status(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::MissingInputs(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn error_line(e: &Error) -> String {
    let path = match e {
        Error::Config { path, .. } => path.clone(),
        _ => None,
    };
    let message = match e {
        Error::Config { message, .. } => message.clone(),
        other => other.to_string(),
    };
    serde_json::json!({ "error": e.class(), "path": path, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest { common, input } => commands::ingest(&common, input),
        Command::Train { common } => commands::train(&common),
        Command::Eval { common, checkpoint } => commands::eval(&common, &checkpoint),
        Command::Sweep { common } => commands::sweep(&common),
        Command::Tune { common } => commands::tune(&common),
        Command::Oracle { common } => commands::oracle(&common),
        Command::ExportPlots { common, run } => commands::export_plots(&common, &run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(exit_status(&e))
        }
    }
}
