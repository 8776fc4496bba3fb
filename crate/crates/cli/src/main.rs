mod error;
mod remote;
mod run;
mod serve;
mod sweep;
mod synth;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "mcle", version, about = "Pool-based active learning with zero-shot priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-blob bundle.
    Synth(synth::SynthArgs),
    /// Run one session (or one per unknown class) with the simulated oracle.
    Run(run::RunArgs),
    /// Run strategies x classes x seeds and summarise them.
    Sweep(sweep::SweepArgs),
    /// Serve sessions over HTTP.
    Serve(serve::ServeArgs),
    /// Talk to a running service.
    Session(remote::SessionArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synth::cmd_synth(args),
        Command::Run(args) => run::cmd_run(args),
        Command::Sweep(args) => sweep::cmd_sweep(args),
        Command::Serve(args) => serve::cmd_serve(args),
        Command::Session(args) => remote::cmd_session(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub(crate) fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io("tokio runtime", e))
}
