mod args;
mod commands;
mod config;

use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use args::{Cli, Command};
use config::{merge, UsageError};

fn run(cli: Cli) -> Result<()> {
    let jobs = cli.jobs.unwrap_or(1);
    if jobs == 0 {
        return Err(config::usage("--jobs must be >= 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    let cfg = cli.config.as_deref();
    let name = cli.command.name();
    match &cli.command {
        Command::GenEnvs(a) => commands::gen_envs(&merge(a, cfg, name)?),
        Command::GenData(a) => commands::gen_data(&merge(a, cfg, name)?),
        Command::Train(a) => commands::train_cmd(&merge(a, cfg, name)?),
        Command::Plan(a) => commands::plan(&merge(a, cfg, name)?),
        Command::Compose(a) => commands::compose(&merge(a, cfg, name)?),
        Command::Simulate(a) => commands::simulate(&merge(a, cfg, name)?),
        Command::Evaluate(a) => commands::evaluate(&merge(a, cfg, name)?),
        Command::Render(a) => commands::render_cmd(&merge(a, cfg, name)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
