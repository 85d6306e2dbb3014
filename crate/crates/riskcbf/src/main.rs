use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(riskcbf::cli::main() as u8)
}
