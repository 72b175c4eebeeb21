use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(esv_forge::run(std::env::args_os()))
}
