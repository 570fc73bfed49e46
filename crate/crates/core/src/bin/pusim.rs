use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(pusim::cli::main_with_args(std::env::args_os(), &mut std::io::stdout().lock()))
}
