//! Library surface of the `circledet` command-line harness. Each subcommand
//! is a plain function so integration tests can drive them without spawning
//! processes.

pub mod check;
pub mod forward;
pub mod gen;
pub mod optimize;

use circledet_core::error::Error;
use circledet_core::evalap::{self, ApReport};
use circledet_core::synthgen;
use std::path::Path;

/// Exit code used by subcommands whose verification failed.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit code for usage and file-format problems.
pub const EXIT_USAGE: i32 = 2;

/// Maps a core error to the process exit code contract: format and I/O
/// problems are usage errors (2), everything else is a failed run (1).
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Format { .. } | Error::Io { .. } => EXIT_USAGE,
        _ => EXIT_CHECK_FAILED,
    }
}

/// Runs the `eval` subcommand: reads ground truth and predictions, writes
/// the AP report as JSON and returns it.
pub fn run_eval(pred: &Path, gt: &Path, out: &Path) -> Result<ApReport, Error> {
    let gt_file = synthgen::annotation_from_json(&std::fs::read_to_string(gt)?)?;
    let pred_file = synthgen::prediction_from_json(&std::fs::read_to_string(pred)?)?;
    let report = evalap::ap_summary(&gt_file, &pred_file)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serialization");
    text.push('\n');
    synthgen::write_file_atomic(out, text.as_bytes())?;
    Ok(report)
}
