//! Command-line orchestration over `ccgan-core`: dataset synthesis,
//! training, translation, evaluation, tracking, ablation and reporting.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 data error, 4 divergence,
//! 5 metric precondition failure.

pub mod ablation;
pub mod cli;
pub mod commands;
pub mod config;
pub mod plot;
pub mod synth;

use ccgan_core::{Error, ErrorClass, Result};

pub use cli::{Cli, Command};

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Divergence => 4,
        ErrorClass::Metric => 5,
    }
}

/// Dispatches one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let go = || -> Result<()> {
        match &cli.command {
            Command::Synth(a) => commands::cmd_synth(a).map(drop),
            Command::Train(a) => commands::cmd_train(a).map(drop),
            Command::Translate(a) => commands::cmd_translate(a).map(drop),
            Command::EvalResolution(a) => commands::cmd_eval_resolution(a).map(drop),
            Command::EvalNakagami(a) => commands::cmd_eval_nakagami(a).map(drop),
            Command::EvalImageQuality(a) => commands::cmd_eval_image_quality(a).map(drop),
            Command::Track(a) => commands::cmd_track(a).map(drop),
            Command::Ablate(a) => ablation::cmd_ablate(a).map(drop),
            Command::Report(a) => commands::cmd_report(a).map(drop),
        }
    };
    match cli.workers {
        Some(n) => ccgan_core::par::with_workers(n, go),
        None => go(),
    }
}
