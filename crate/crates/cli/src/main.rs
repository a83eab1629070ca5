use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use fiberatlas_cli::commands::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    let start = Instant::now();
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("FIBERATLAS_LOG")
        .format(move |buf, record| {
            writeln!(buf, "t={:.3}s level={} {}", start.elapsed().as_secs_f64(), record.level(), record.args())
        })
        .init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
