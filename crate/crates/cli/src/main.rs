use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = anagram_cli::Cli::parse();
    match anagram_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.into()
        }
    }
}
