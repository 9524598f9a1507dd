mod cli;
mod commands;
mod config;
mod pipeline;
mod stage;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command, TreeCommand};
use commands::Ctx;
use config::PipelineConfig;

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = PipelineConfig::load_or_default(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = cli.out {
        config.out = Some(o);
    }
    let ctx = Ctx {
        config,
        force: cli.force,
    };
    match &cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Extract(a) => commands::extract(&ctx, a),
        Command::Train(a) => commands::train_cmd(&ctx, a),
        Command::Features(a) => commands::features(&ctx, a),
        Command::Viz(a) => commands::viz(&ctx, a),
        Command::Bestchannel(a) => commands::bestchannel(&ctx, a),
        Command::Tree(TreeCommand::Fit(a)) => commands::tree_fit(&ctx, a),
        Command::Tree(TreeCommand::Score(a)) => commands::tree_score(a),
        Command::Illuminate(a) => commands::illuminate(&ctx, a),
        Command::Serve(a) => commands::serve(a),
        Command::Run => pipeline::run(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
