//! `steinbench`: evaluate Stein-method bounds and check them numerically.
//!
//! Exit status: 0 on success, 2 when a check fails, 1 on usage or input
//! errors.

mod commands;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use commands::Outcome;
use options::{Command, Options};

#[derive(Debug, Parser)]
#[command(name = "steinbench", version, about = "Stein-method normal approximation bounds")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// TOML experiment file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print every formula id with its reference and exit.
    #[arg(long, global = true)]
    list_formulas: bool,
    #[command(flatten)]
    options: Options,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = if cli.list_formulas {
        options::resolve(Some(cli.command.unwrap_or(Command::Bound)), cli.options, cli.config.as_deref())
            .and_then(|(_, opts)| commands::list_formulas(&opts).map(|_| Outcome::Success))
    } else {
        options::resolve(cli.command, cli.options, cli.config.as_deref())
            .and_then(|(command, opts)| commands::run(command, &opts))
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
