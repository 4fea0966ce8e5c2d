mod args;
mod commands;
mod csv;
mod error;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Demo(a) => commands::demo(a),
        Command::SweepObs(a) => commands::sweep_obs(a),
        Command::SweepDim(a) => commands::sweep_dim(a),
        Command::Equivalence(a) => commands::equivalence(a),
        Command::MomentsCheck(a) => commands::moments_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
