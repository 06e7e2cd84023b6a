//! `sentinel` command line: generate data, train, evaluate, run NMF
//! sessions and watch a directory.
//!
//! Exit codes: 0 ok, 1 usage, 2 data error, 3 threshold failure, 4 runtime
//! fault.

pub mod cmd;
pub mod config;
pub mod error;
mod io;

use clap::{CommandFactory, Parser, Subcommand};

use crate::config::{CliConfig, GlobalArgs};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sentinel", version, about = "Streaming ML monitors for beamline data", propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a canonical synthetic benchmark as JSON Lines
    Synth(cmd::synth::SynthArgs),
    /// Run the split/tune protocol, print the metrics table and save a model
    Train(cmd::train::TrainArgs),
    /// Score a saved model on a labeled dataset
    Eval(cmd::eval::EvalArgs),
    /// Stream spectra through NMF and write plot-ready snapshots per update
    Nmf(cmd::nmf::NmfArgs),
    /// Watch a directory and report on every new file until interrupted
    Watch(cmd::watch::WatchArgs),
}

pub fn command() -> clap::Command {
    Cli::command()
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, env: &dyn Fn(&str) -> Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, env) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, env: &dyn Fn(&str) -> Option<String>) -> Result<(), CliError> {
    let config = CliConfig::resolve(&cli.global, env)?;
    eprint!("{}", config.describe());
    match cli.command {
        Command::Synth(a) => cmd::synth::run(&config, &a),
        Command::Train(a) => cmd::train::run(&config, &a),
        Command::Eval(a) => cmd::eval::run(&config, &a),
        Command::Nmf(a) => cmd::nmf::run(&config, &a),
        Command::Watch(a) => cmd::watch::run(&config, &a),
    }
}
