//! Config-driven experiments: validate, simulate, analyze and sweep.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod config;
pub mod io;
pub mod simulate;
pub mod svg;
pub mod sweep;
pub mod validate;

use std::fmt;

pub use analyze::{analyze, AnalyzeOptions};
pub use config::{Experiment, ExperimentConfig};
pub use simulate::{simulate, RunManifest, RunStatus};
pub use sweep::{sweep, SweepConfig};
pub use validate::validate;

/// Bad input: unreadable or malformed files, invalid arguments.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// 2 when any cause in the chain is a [`UsageError`], 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|c| c.downcast_ref::<UsageError>().is_some()) {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

/// Parses `A:B` into an ordered pair of finite numbers.
pub fn parse_interval(text: &str) -> Result<(f64, f64), UsageError> {
    let bad = || UsageError(format!("expected an interval A:B, got {text:?}"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(bad());
    }
    Ok((a, b))
}
