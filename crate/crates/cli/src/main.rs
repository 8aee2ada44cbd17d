use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(hdpo::run(std::env::args_os()))
}
