use std::process::ExitCode;

fn main() -> ExitCode {
    brihmm::cli::main_with_args(std::env::args_os())
}
