use std::process::ExitCode;

use clap::Parser;

use sdfm_cli::{execute, Cli, CliError, EXIT_NOT_CONVERGED, EXIT_OK};

/// Size the global pool from `SDFM_THREADS` if set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("SDFM_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Usage(format!("SDFM_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = configure_threads().and_then(|()| execute(cli, &args));
    let code = match result {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if outcome.converged {
                EXIT_OK
            } else {
                eprintln!("error: EM did not converge; outputs written to {}", outcome.out_dir.display());
                EXIT_NOT_CONVERGED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
