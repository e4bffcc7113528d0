use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(photonbench_service::cli::run(std::env::args_os()) as u8)
}
