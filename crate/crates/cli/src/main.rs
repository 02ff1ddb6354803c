mod args;
mod colormap;
mod commands;
mod error;
mod scene_file;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};

/// Runs `f` on a pool of `threads` workers, or the global pool when unset.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Input("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Input(format!("thread pool: {e}"))),
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => with_threads(cli.threads, || commands::synth(a))?,
        Command::Match(a) => {
            let config = commands::match_config(a)?;
            let threads = cli.threads.or(config.run.threads);
            with_threads(threads, || commands::run_match(a, &config))?
        }
        Command::Eval(a) => with_threads(cli.threads, || commands::eval(a))?,
        Command::Viz(a) => with_threads(cli.threads, || commands::viz(a))?,
        Command::Register(a) => with_threads(cli.threads, || commands::register_cmd(a))?,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stereofuse: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
