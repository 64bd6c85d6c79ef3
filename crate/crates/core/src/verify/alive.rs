//! Translation validation through `alive-tv`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use crate::ir::symbols::rename_globals;
use crate::ir::IrPair;
use crate::toolchain::{run_command, tool_command, Tool, ToolError, ToolchainConfig};

use super::{Method, VerdictStatus, VerificationVerdict};

#[derive(Debug, thiserror::Error)]
pub enum AliveError {
    #[error("alive-tv failed (exit {code:?}):\n{output}")]
    ToolFailure { code: Option<i32>, output: String },
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Counts from the `Summary:` block alive-tv prints at exit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AliveSummary {
    pub correct: u64,
    pub incorrect: u64,
    pub failed_to_prove: u64,
    pub errors: u64,
}

pub fn parse_summary(output: &str) -> Option<AliveSummary> {
    let mut s = AliveSummary::default();
    let mut seen = false;
    for line in output.lines() {
        let line = line.trim();
        let Some((n, rest)) = line.split_once(' ') else { continue };
        let Ok(n) = n.parse::<u64>() else { continue };
        let slot = match rest {
            "correct transformations" | "correct transformation" => &mut s.correct,
            "incorrect transformations" | "incorrect transformation" => &mut s.incorrect,
            "failed-to-prove transformations" | "failed-to-prove transformation" => &mut s.failed_to_prove,
            "Alive2 errors" | "Alive2 error" => &mut s.errors,
            _ => continue,
        };
        *slot = n;
        seen = true;
    }
    seen.then_some(s)
}

/// Maps alive-tv output to a verdict status. `None` means the output was
/// not recognizable at all.
pub fn classify(output: &str) -> Option<VerdictStatus> {
    let summary = parse_summary(output)?;
    let lower = output.to_ascii_lowercase();
    Some(if summary.incorrect > 0 {
        VerdictStatus::Inequivalent
    } else if lower.contains("error: timeout") || lower.contains("smt timeout") {
        VerdictStatus::Alive2Timeout
    } else if summary.errors > 0 || summary.failed_to_prove > 0 {
        VerdictStatus::Alive2Unsupported
    } else if summary.correct > 0 {
        VerdictStatus::Equivalent
    } else {
        // nothing was checked, e.g. no functions in common
        VerdictStatus::Alive2Unsupported
    })
}

fn verdict(status: VerdictStatus, detail: String) -> VerificationVerdict {
    VerificationVerdict {
        method: Method::Alive2,
        status,
        detail,
        fuzz_runs_completed: 0,
        reproducer: None,
    }
}

/// Checks `pair.unopt` refines to `pair.opt`. The optimized side's paired
/// functions are renamed back to their base names so alive-tv matches them.
pub fn alive_check(
    pair: &IrPair,
    toolchain: &ToolchainConfig,
    timeout_s: u64,
    flags: &[String],
    workdir: &Path,
) -> Result<VerificationVerdict, AliveError> {
    let alive = match toolchain.resolve(Tool::AliveTv) {
        Ok(p) => p,
        Err(e) => {
            return Ok(VerificationVerdict {
                method: Method::None,
                status: VerdictStatus::Skipped,
                detail: format!("alive2 not run: {e}"),
                fuzz_runs_completed: 0,
                reproducer: None,
            })
        }
    };
    std::fs::create_dir_all(workdir)?;
    let renames: BTreeMap<String, String> = pair
        .match_public_functions()
        .map(|ms| {
            ms.into_iter()
                .filter(|m| m.opt_side_name != m.base)
                .map(|m| (m.opt_side_name, m.base))
                .collect()
        })
        .unwrap_or_default();
    let src = pair.unopt.write_to(workdir, "alive_src.ll")?;
    let tgt_text = rename_globals(&pair.opt.text, &renames);
    let tgt = workdir.join("alive_tgt.ll");
    std::fs::write(&tgt, tgt_text)?;

    let mut cmd = tool_command(&alive);
    cmd.args(flags).arg(&src).arg(&tgt);
    let out = run_command(&mut cmd, Some(Duration::from_secs(timeout_s)))?;
    let log = out.combined();
    let header = format!("alive-tv flags: [{}]\n", flags.join(" "));
    if out.timed_out {
        return Ok(verdict(
            VerdictStatus::Alive2Timeout,
            format!("{header}killed after {timeout_s} s\n{log}"),
        ));
    }
    match classify(&log) {
        Some(status) => Ok(verdict(status, format!("{header}{log}"))),
        None => Err(AliveError::ToolFailure {
            code: out.exit_code(),
            output: log,
        }),
    }
}
