use std::process::ExitCode;

fn main() -> ExitCode {
    lohgnet::cli::main_with_args(std::env::args_os())
}
