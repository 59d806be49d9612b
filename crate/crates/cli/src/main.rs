use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(binprobe::main_with_args(std::env::args_os()))
}
