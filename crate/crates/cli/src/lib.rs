//! Pipelines behind the `imfield` command: dataset generation, training,
//! decoding, evaluation and gradient verification.

pub mod config;
pub mod dataset;
pub mod decode;
pub mod error;
pub mod eval;
pub mod report;
pub mod train;

use std::io::Write;

use imfield::autodiff::gradcheck::{CheckReport, GradCheckOptions};
use imfield::verify::gradcheck_suite;

pub use config::Config;
pub use error::{CliError, CliResult};

/// Runs the finite-difference suite and prints one line per case; fails
/// naming the worst case when any exceeds the tolerance.
pub fn gradcheck(seeds: u64, corrupt: bool, out: &mut dyn Write) -> CliResult<Vec<CheckReport>> {
    let opts = GradCheckOptions::default();
    let reports = gradcheck_suite(seeds, &opts, corrupt)?;
    train::emit(out, "case\tmax_rel_error\tchecked\tskipped\tstatus")?;
    for r in &reports {
        let status = if r.passed(opts.tolerance) { "pass" } else { "FAIL" };
        train::emit(
            out,
            &format!("{}\t{:.3e}\t{}\t{}\t{status}", r.name, r.max_rel_error, r.checked, r.skipped),
        )?;
    }
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("suite has cases");
    if !worst.passed(opts.tolerance) {
        return Err(CliError::Verification(format!(
            "{} has relative error {:.3e} (input {}), tolerance {:.0e}",
            worst.name, worst.max_rel_error, worst.worst_input, opts.tolerance
        )));
    }
    Ok(reports)
}

/// Sizes the global thread pool from `IMFIELD_THREADS` when set.
pub fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("IMFIELD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("IMFIELD_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot size the thread pool: {e}")))
}
