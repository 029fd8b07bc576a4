use std::process::ExitCode;

use clap::Parser;
use tabprior_cli::args::{Cli, Command};
use tabprior_cli::{attn, filter_stats, gallery, generate, qdist};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate::run(a),
        Command::Gallery(a) => gallery::run(a),
        Command::FilterStats(a) => filter_stats::run(a),
        Command::Qdist(a) => qdist::run(a),
        Command::AttnDiag(a) => attn::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
