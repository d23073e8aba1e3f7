use std::process::ExitCode;

fn main() -> ExitCode {
    collapse_lattice::cli::run_from_args(std::env::args_os())
}
