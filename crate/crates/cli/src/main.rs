//! `saban` command line: tokenize, decode, embed, train, evaluate, screen,
//! ablate, and export-attention over the drug-target interaction pipeline.
//!
//! Exit status: 0 on success, 1 on user errors (bad input, missing files),
//! 2 on internal invariant violations (panics).

mod commands;
mod manifest;

use clap::error::ErrorKind;
use clap::Parser;

use commands::{Cli, run};

fn main() {
    // SABAN_THREADS caps internal parallelism (evaluation and screening
    // fan-out); unset means rayon's default.
    if let Ok(threads) = std::env::var("SABAN_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: SABAN_THREADS must be a positive integer, got {threads:?}");
                std::process::exit(1);
            }
        }
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let outcome = std::panic::catch_unwind(move || run(cli));
    match outcome {
        Ok(Ok(())) => {}
        Ok(Err(err)) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
        Err(_) => {
            // The panic message has already been printed by the default hook.
            eprintln!("error: internal invariant violation");
            std::process::exit(2);
        }
    }
}
