use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

mod args;
mod commands;
mod config;
mod error;

use args::{Cli, Command, ExperimentCommand};
use error::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            // Parsing failed, so look for the flag by hand.
            let err = CliError::Usage(e.render().to_string());
            return report(&err, std::env::args().any(|a| a == "--json-errors"));
        }
    };

    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match &cli.command {
        Command::Analyze(a) => commands::analyze(&cli, a),
        Command::Exact(a) => commands::exact(&cli, a),
        Command::Experiment(ExperimentCommand::Inject(a)) => commands::inject(&cli, a),
        Command::Experiment(ExperimentCommand::Converge(a)) => commands::converge(&cli, a),
        Command::Cache(a) => commands::cache(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e, cli.json_errors),
    }
}

fn report(err: &CliError, json: bool) -> ExitCode {
    if json {
        eprintln!("{}", err.to_json());
    } else {
        let message = err.message().trim_end();
        if message.starts_with("error:") {
            eprintln!("{message}");
        } else {
            eprintln!("error: {message}");
        }
    }
    ExitCode::from(err.exit_code())
}
