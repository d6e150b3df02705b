// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{apply_config, Cli, Command};
use error::Result;

fn run(mut cli: Cli) -> Result<()> {
    apply_config(&mut cli)?;
    let common = &cli.common;
    match &cli.command {
        Command::Calibrate(a) => commands::calibrate(common, a),
        Command::Spd(a) => commands::spd_cmd(common, a),
        Command::PpFit(a) => commands::pp_fit(common, a),
        Command::Summarize(a) => commands::summarize(common, a),
        Command::Simulate(a) => commands::simulate(common, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("carbonpp: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
