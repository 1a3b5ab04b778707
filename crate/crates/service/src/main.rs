use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use hyperpheno_service::cli::{run, Cli, ConfigError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                eprintln!("{}", Cli::command().render_usage());
                return ExitCode::from(2);
            }
            ExitCode::FAILURE
        }
    }
}
