mod args;
mod commands;
mod config;
mod output;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// A problem with the invocation rather than with the computation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if err.downcast_ref::<UsageError>().is_some() {
        "usage"
    } else if err.downcast_ref::<seedprint_core::Error>().is_some() {
        "model"
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else {
        "internal"
    }
}

fn report(kind: &str, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{line}");
    ExitCode::from(2)
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(UsageError("--workers must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global()?;
    }
    match cli.command {
        Command::TokenBias(a) => commands::token_bias::run(a),
        Command::Contraction(a) => commands::contraction::run(a),
        Command::VerifyTheory(a) => commands::theory::run(a),
        Command::Fingerprint(a) => commands::fingerprint::run(a),
        Command::Sink(a) => commands::sink::run(a),
        Command::Init(a) => commands::init::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return report("usage", first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => report(error_kind(&e), &format!("{e:#}")),
    }
}
