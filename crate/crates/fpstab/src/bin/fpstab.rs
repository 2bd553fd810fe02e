use std::process::ExitCode;

use clap::Parser;
use fpstab::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.run() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    for v in &outcome.violations {
        eprintln!("violation: {v}");
    }
    match cli.fails(&outcome) {
        Ok(true) => ExitCode::from(1),
        Ok(false) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
