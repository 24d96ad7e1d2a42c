use std::process::ExitCode;

use clap::Parser;
use tiltsens_cli::{exit_code, run, Cli, Outcome, EXIT_NUMERICAL, EXIT_OK, EXIT_PARTIAL};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level.filter()).format_timestamp(None).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(tiltsens_cli::EXIT_INPUT);
        }
    }
    match run(&cli) {
        Ok(Outcome::Complete) => ExitCode::from(EXIT_OK),
        Ok(Outcome::Partial(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(EXIT_PARTIAL)
        }
        Ok(Outcome::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
