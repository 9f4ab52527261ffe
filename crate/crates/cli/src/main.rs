use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(progrl_cli::run(std::env::args_os()))
}
