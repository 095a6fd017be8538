use std::process::ExitCode;

use clap::error::ErrorKind;

fn main() -> ExitCode {
    let inv = match radkg_cli::app::parse(std::env::args_os()) {
        Ok(inv) => inv,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match inv.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match radkg_cli::run(&inv) {
        Ok(out) => {
            print!("{out}");
            radkg_cli::commands::flush_stdout();
            ExitCode::SUCCESS
        }
        Err(failure) => {
            radkg_cli::commands::flush_stdout();
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
