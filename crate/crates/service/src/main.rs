use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(persona_service::cli::main_with_args(std::env::args()))
}
