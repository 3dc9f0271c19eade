use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use repdiv_cli::args::{Cli, Command};
use repdiv_cli::{cmd_ci, cmd_coverage, cmd_curve, cmd_fit, CliError, CliResult};
use repdiv_core::par;

/// Worker-pool size from `REPDIV_THREADS`; 0 leaves the default.
fn thread_cap() -> CliResult<usize> {
    match std::env::var("REPDIV_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("REPDIV_THREADS must be a non-negative integer, got '{v}'"))),
        Err(_) => Ok(0),
    }
}

fn run(command: Command) -> CliResult<Vec<std::path::PathBuf>> {
    let threads = thread_cap()?;
    match command {
        Command::Fit(a) => {
            let cfg = a.resolve()?;
            par::with_threads(threads, || cmd_fit(&cfg, &a.out)).map(|p| vec![p])
        }
        Command::Ci(a) => {
            let cfg = a.resolve()?;
            par::with_threads(threads, || cmd_ci(&cfg, &a.out)).map(|p| vec![p])
        }
        Command::Curve(a) => {
            let cfg = a.resolve()?;
            cmd_curve(&cfg, &a.out).map(|p| vec![p])
        }
        Command::Coverage(a) => {
            let cfg = a.resolve()?;
            par::with_threads(threads, || cmd_coverage(&cfg, &a.out))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.kind().to_string());
            eprint!("{e}");
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
