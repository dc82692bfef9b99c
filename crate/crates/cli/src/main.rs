use std::io::Write;
use std::process::ExitCode;

use bellforge::config::Cli;
use clap::Parser;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match bellforge::run(&cli) {
        Ok(out) => {
            if cli.out.is_none() {
                let _ = std::io::stdout().write_all(out.text.as_bytes());
            }
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for f in &out.failures {
                eprintln!("check failed: {f}");
            }
            ExitCode::from(out.exit_code as u8)
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
