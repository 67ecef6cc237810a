use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use poisson_chaos_cli::output::{summary_lines, write};
use poisson_chaos_cli::settings::{Cli, Settings};
use poisson_chaos_cli::suites::run;
use poisson_chaos_cli::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("pchaos: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let settings = Settings::resolve(cli)?;
    let outcome = run(&settings)?;
    let written = write(&settings, &outcome)?;
    // a closed stdout (e.g. piped into head) must not turn a finished run into a panic
    let mut stdout = std::io::stdout().lock();
    for line in summary_lines(&outcome) {
        let _ = writeln!(stdout, "{line}");
    }
    for path in written {
        let _ = writeln!(stdout, "wrote {}", path.display());
    }
    Ok(outcome.passed())
}
