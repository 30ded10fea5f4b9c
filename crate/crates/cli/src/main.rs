// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::{resolve, Cli};
use crate::error::CliError;

fn run() -> Result<bool, CliError> {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // help and version requests exit 0, everything else 2
            return if e.exit_code() == 0 {
                Ok(true)
            } else {
                Err(CliError::Usage(String::new()))
            };
        }
    };
    let env_out = std::env::var_os("QGL_OUT").map(PathBuf::from);
    let cfg = resolve(cli.command, cli.flags, env_out)?;
    // a global pool may already exist in tests; the cap is then best effort
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    commands::run_command(cli.command, &cfg)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("qgl: one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("qgl: {msg}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
