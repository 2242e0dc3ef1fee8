use std::io::Write;
use std::process::ExitCode;

use aqms_cli::commands::{execute, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let out = execute(Cli::parse());
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    let _ = std::io::stdout().flush();
    ExitCode::from(out.code)
}
