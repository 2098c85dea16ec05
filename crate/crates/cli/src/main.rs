//! `cevt`: synthetic data generation, adversarial open-set training,
//! evaluation, standalone GEV fitting, and hyperparameter sweeps.

mod commands;
mod config;

use config::{parse_args, render_config, CliResult, Command};
use std::process::ExitCode;

fn run(args: &[String]) -> CliResult<()> {
    let cfg = parse_args(args)?;
    if cfg.print_config {
        print!("{}", render_config(&cfg));
        return Ok(());
    }
    match cfg.command {
        Command::Generate => commands::generate(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::FitGev => commands::fit_gev_cmd(&cfg),
        Command::Sweep => commands::sweep(&cfg),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
