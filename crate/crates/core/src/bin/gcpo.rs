use std::process::ExitCode;

fn main() -> ExitCode {
    if let Err(e) = gcpo::cli::init_thread_pool() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(gcpo::cli::run_from_args(std::env::args_os()) as u8)
}
