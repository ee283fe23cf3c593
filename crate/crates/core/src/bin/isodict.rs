use std::process::ExitCode;

fn main() -> ExitCode {
    isodict::cli::main_with_args(std::env::args_os())
}
