use std::process::ExitCode;

use clap::Parser;
use mfteam_cli::{run, Cli, WORKERS_ENV};

fn main() -> ExitCode {
    if let Ok(value) = std::env::var(WORKERS_ENV) {
        match value.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("thread pool is configured once");
            }
            _ => {
                eprintln!("error: {WORKERS_ENV} must be a positive integer, got `{value}`");
                return ExitCode::from(2);
            }
        }
    }
    let raw: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match run(cli, raw) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
