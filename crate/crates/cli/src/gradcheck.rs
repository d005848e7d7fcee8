//! `gradcheck`: finite-difference verification of every backward pass.

use std::path::Path;

use cropseg_core::train::{gradient_check, GradcheckOptions, GradcheckReport, Scope};

use crate::config::data_error;
use crate::error::{CliError, CliResult};

pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// Run the suite for `scopes` (all when empty). `inject_fault` scales the
/// analytic gradients of one case to prove the harness notices.
pub fn cmd_gradcheck(
    scopes: &[Scope],
    seed: u64,
    inject_fault: Option<&str>,
    out_dir: Option<&Path>,
) -> CliResult<GradcheckReport> {
    let opts = GradcheckOptions {
        scopes: if scopes.is_empty() { Scope::all() } else { scopes.to_vec() },
        seed,
        corrupt: inject_fault.map(str::to_string),
    };
    let report = gradient_check(&opts)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| data_error(dir, e))?;
        let path = dir.join(GRADCHECK_FILE);
        std::fs::write(&path, report.to_table()).map_err(|e| data_error(&path, e))?;
    }
    Ok(report)
}

/// `Err` with the gradcheck exit status unless every group passed.
pub fn require_pass(report: &GradcheckReport) -> CliResult<()> {
    let failed = report.cases.iter().filter(|c| !c.passed()).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Gradcheck {
            failed,
            total: report.cases.len(),
        })
    }
}
