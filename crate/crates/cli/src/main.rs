use std::io::IsTerminal;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::Parser;
use privinfer_cli::commands;
use privinfer_cli::config::RunConfig;
use privinfer_cli::exit;
use signal_hook::consts::{SIGINT, SIGTERM};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(EnvFilter::try_from_env("PRIVINFER_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let shutdown = Arc::new(AtomicBool::new(false));
    for sig in [SIGTERM, SIGINT] {
        if let Err(e) = signal_hook::flag::register(sig, Arc::clone(&shutdown)) {
            eprintln!("error: cannot install signal handler: {e}");
            return ExitCode::from(exit::INTERNAL);
        }
    }
    let result = RunConfig::parse().resolve().and_then(|cfg| commands::run(&cfg, shutdown));
    match result {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
