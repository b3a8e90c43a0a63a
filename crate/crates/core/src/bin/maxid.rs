use std::process::ExitCode;

fn main() -> ExitCode {
    maxid::cli::main_entry()
}
