use std::process::ExitCode;

use clap::Parser;
use popcast_cli::{execute, Cli};

fn main() -> ExitCode {
    // clap exits with status 2 on bad flags
    let cli = Cli::parse();
    if let Err(e) = cli.check() {
        e.exit();
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
