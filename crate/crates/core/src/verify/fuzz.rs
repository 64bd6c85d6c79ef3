//! Building and running differential fuzzers.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::ir::symbols::scan_module;
use crate::ir::IrPair;
use crate::toolchain::{run_command, tool_command, Tool, ToolError, ToolchainConfig};

use super::harness::FuzzHarness;
use super::merge::MergedModule;
use super::{Method, VerdictStatus, VerificationVerdict};

pub const SANITIZE_FLAGS: &str = "-fsanitize=fuzzer,address,undefined";
const BUILD_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, thiserror::Error)]
pub enum FuzzError {
    #[error("build failed:\n{0}")]
    BuildFailure(String),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("fuzzer binary {0} does not exist")]
    MissingBinary(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Writes `merged.ll` and `fuzz.cc` into `workdir`, compiles the IR with
/// `llc` and links it with the harness under the fuzzer and sanitizers.
pub fn build_fuzzer(
    merged: &MergedModule,
    harness: &FuzzHarness,
    toolchain: &ToolchainConfig,
    workdir: &Path,
) -> Result<PathBuf, FuzzError> {
    std::fs::create_dir_all(workdir)?;
    let llc = toolchain.resolve(Tool::Llc)?;
    let clangxx = toolchain.resolve(Tool::ClangXX)?;
    let ll = merged.program.write_to(workdir, "merged.ll")?;
    let cc = workdir.join("fuzz.cc");
    std::fs::write(&cc, &harness.source)?;
    let obj = workdir.join("merged.o");
    let bin = workdir.join("fuzzer");

    let out = run_command(
        tool_command(&llc)
            .arg("-filetype=obj")
            .arg("-relocation-model=pic")
            .arg(&ll)
            .arg("-o")
            .arg(&obj),
        Some(BUILD_TIMEOUT),
    )?;
    if !out.success() {
        return Err(FuzzError::BuildFailure(format!("llc:\n{}", out.combined())));
    }
    let out = run_command(
        tool_command(&clangxx)
            .arg(SANITIZE_FLAGS)
            .arg(&cc)
            .arg(&obj)
            .arg("-o")
            .arg(&bin),
        Some(BUILD_TIMEOUT),
    )?;
    if !out.success() {
        return Err(FuzzError::BuildFailure(format!("clang++:\n{}", out.combined())));
    }
    Ok(bin)
}

#[derive(Debug, Clone)]
pub struct FuzzOptions {
    pub runs: u64,
    /// Wall-clock budget for the whole run.
    pub budget: Duration,
    /// libFuzzer per-input timeout in seconds.
    pub input_timeout_s: u64,
    /// Fixed seed for reproducible runs; 0 lets libFuzzer pick.
    pub seed: u64,
}

impl Default for FuzzOptions {
    fn default() -> Self {
        FuzzOptions {
            runs: 200_000,
            budget: Duration::from_secs(600),
            input_timeout_s: 10,
            seed: 1,
        }
    }
}

fn artifacts(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with(prefix))
                })
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

fn done_runs(log: &str) -> Option<u64> {
    log.lines()
        .rev()
        .find_map(|l| l.strip_prefix("Done ").and_then(|r| r.split_whitespace().next()?.parse().ok()))
}

fn tail(s: &str, lines: usize) -> String {
    let v: Vec<&str> = s.lines().collect();
    v[v.len().saturating_sub(lines)..].join("\n")
}

/// Runs the fuzzer for `opts.runs` inputs. Crashes are saved as
/// `<workdir>/crash-*`; generated inputs stay in `corpus_dir`.
pub fn run_diff_fuzz(
    binary: &Path,
    corpus_dir: &Path,
    workdir: &Path,
    opts: &FuzzOptions,
) -> Result<VerificationVerdict, FuzzError> {
    if !binary.is_file() {
        return Err(FuzzError::MissingBinary(binary.display().to_string()));
    }
    std::fs::create_dir_all(corpus_dir)?;
    let prefix = format!("{}/", workdir.display());
    let mut cmd = tool_command(binary);
    cmd.arg(format!("-runs={}", opts.runs))
        .arg(format!("-artifact_prefix={prefix}"))
        .arg(format!("-timeout={}", opts.input_timeout_s))
        .arg(format!("-seed={}", opts.seed))
        .arg(corpus_dir);
    let out = run_command(&mut cmd, Some(opts.budget))?;
    let log = out.combined();
    let completed = done_runs(&log).unwrap_or(0);

    let verdict = |status, detail: String, reproducer| VerificationVerdict {
        method: Method::DiffTest,
        status,
        detail,
        fuzz_runs_completed: completed,
        reproducer,
    };

    if out.timed_out {
        return Ok(verdict(
            VerdictStatus::Skipped,
            format!("fuzz wall-clock budget of {:?} exceeded\n{}", opts.budget, tail(&log, 20)),
            None,
        ));
    }
    if out.success() && completed >= opts.runs {
        return Ok(verdict(VerdictStatus::Equivalent, tail(&log, 5), None));
    }
    if let Some(crash) = artifacts(workdir, "crash-").into_iter().next() {
        return Ok(verdict(
            VerdictStatus::FuzzCrash,
            format!("reproducer: {}\n{}", crash.display(), tail(&log, 40)),
            Some(crash),
        ));
    }
    let stalled = artifacts(workdir, "timeout-")
        .into_iter()
        .chain(artifacts(workdir, "oom-"))
        .next();
    if let Some(p) = stalled {
        return Ok(verdict(
            VerdictStatus::Skipped,
            format!("input exceeded the per-input limit (non-termination?): {}\n{}", p.display(), tail(&log, 20)),
            Some(p),
        ));
    }
    Ok(verdict(
        VerdictStatus::Skipped,
        format!("fuzzer exited with {:?} after {completed} runs\n{}", out.exit_code(), tail(&log, 40)),
        None,
    ))
}

/// Re-runs one saved input; true iff the binary still fails on it.
pub fn replay_crash(binary: &Path, input: &Path) -> Result<bool, FuzzError> {
    let out = run_command(tool_command(binary).arg(input), Some(Duration::from_secs(60)))?;
    Ok(!out.success())
}

/// Library calls the fuzzer may resolve without custom code.
fn whitelisted(name: &str) -> bool {
    const LIBM: &[&str] = &[
        "sqrt", "cbrt", "sin", "cos", "tan", "asin", "acos", "atan", "atan2", "sinh", "cosh", "tanh", "exp",
        "exp2", "expm1", "log", "log2", "log10", "log1p", "pow", "fabs", "floor", "ceil", "round", "trunc",
        "rint", "nearbyint", "fmod", "fmin", "fmax", "hypot", "copysign", "ldexp", "frexp", "abs", "labs",
        "llabs", "memcpy", "memmove", "memset",
    ];
    name.starts_with("llvm.")
        || LIBM.contains(&name)
        || name
            .strip_suffix('f')
            .or_else(|| name.strip_suffix('l'))
            .is_some_and(|b| LIBM.contains(&b))
}

/// Reason a pair cannot be differentially tested, if any.
pub fn ineligibility(pair: &IrPair) -> Option<String> {
    for (side, prog) in [("unoptimized", &pair.unopt), ("optimized", &pair.opt)] {
        let syms = scan_module(&prog.text);
        let defined: Vec<String> = syms.defined_names();
        if let Some(d) = syms
            .declarations
            .iter()
            .find(|d| !whitelisted(&d.name) && !defined.contains(&d.name))
        {
            return Some(format!("{side} side calls external function @{}", d.name));
        }
        if let Some(g) = syms.globals.iter().find(|g| g.is_external) {
            return Some(format!("{side} side uses externally defined global @{}", g.name));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{IrProgram, Origin, Provenance};

    #[test]
    fn parses_done_line() {
        assert_eq!(done_runs("#100 DONE cov\nDone 10000 runs in 2 second(s)\n"), Some(10000));
        assert_eq!(done_runs("nothing"), None);
    }

    #[test]
    fn eligibility() {
        let mk = |t: &str| IrProgram::new("x", t, Origin::Input);
        let ok = "define i32 @f(i32 %x) {\n  %a = call i32 @llvm.abs.i32(i32 %x, i1 false)\n  %s = call double @sqrtf(double 1.0)\n ret i32 %a\n}\ndeclare i32 @llvm.abs.i32(i32, i1)\ndeclare double @sqrtf(double)\n";
        assert!(ineligibility(&IrPair::new(mk(ok), mk(ok), Provenance::LlmPipeline)).is_none());
        let ext = "declare i32 @rand()\n";
        assert!(ineligibility(&IrPair::new(mk(ok), mk(ext), Provenance::LlmPipeline))
            .unwrap()
            .contains("@rand"));
        let glob = "@g = external global i32\n";
        assert!(ineligibility(&IrPair::new(mk(glob), mk(ok), Provenance::LlmPipeline))
            .unwrap()
            .contains("global @g"));
    }

    #[test]
    fn missing_binary_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_diff_fuzz(&dir.path().join("nope"), &dir.path().join("c"), dir.path(), &FuzzOptions::default());
        assert!(matches!(r, Err(FuzzError::MissingBinary(_))));
    }
}
