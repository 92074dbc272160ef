mod args;
mod commands;
mod error;
mod table;

use std::process::ExitCode;

use clap::Parser;

use crate::error::CliError;

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("UQSUP_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::invalid(format!("UQSUP_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = args::Cli::parse();
    let result = configure_threads()
        .and_then(|()| commands::run(cli.command))
        .and_then(commands::Outputs::commit);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uqsup: {e}");
            e.exit_code()
        }
    }
}
