use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use flowbench::{error_json, error_kind, run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json("", "usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    let command = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(command, error_kind(&e), &format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
