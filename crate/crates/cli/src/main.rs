use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(shield_cli::cli::run_cli(std::env::args_os()) as u8)
}
