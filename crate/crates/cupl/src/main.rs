use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cupl::cli::main_entry())
}
