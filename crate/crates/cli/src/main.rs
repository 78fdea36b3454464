use std::process::ExitCode;

use clap::Parser;
use cortigraph_cli::pipeline::{Stage, StageError};
use cortigraph_cli::run::{execute, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = cortigraph_cli::configure_threads()
        .map_err(|error| StageError {
            stage: Stage::Ingest,
            error,
        })
        .and_then(|()| execute(&cli));
    match result {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}
