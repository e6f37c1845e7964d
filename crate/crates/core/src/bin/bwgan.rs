use std::io;
use std::process::ExitCode;

use bwgan_core::cli::{run, EXIT_USAGE};

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("BWGAN_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_USAGE);
                }
            }
            _ => {
                eprintln!("error: BWGAN_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    let code = run(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr().lock());
    ExitCode::from(code)
}
