use std::process::ExitCode;

fn main() -> ExitCode {
    match cafkt::cli::run(std::env::args()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cafkt::cli::exit_code(&e) as u8)
        }
    }
}
