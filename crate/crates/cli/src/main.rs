//! `pacer` — run, replay, and analyze confidence-screened sampling sessions.

mod args;
mod commands;

use anyhow::Result;
use clap::Parser;

use args::Cli;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        args::Command::Run(cmd) => commands::run(cmd),
        args::Command::Replay(cmd) => commands::replay(cmd),
        args::Command::Simulate(cmd) => commands::simulate(cmd),
        args::Command::Pareto(cmd) => commands::pareto(cmd),
        args::Command::Inspect(cmd) => commands::inspect(cmd),
    }
}
