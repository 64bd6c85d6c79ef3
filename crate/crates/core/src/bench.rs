//! Performance measurement: turning a validated fuzz harness into a
//! microbenchmark (through a pluggable driver), running it over the fuzz
//! corpus, and the speedup arithmetic.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::toolchain::{run_command, tool_command, Tool, ToolError, ToolchainConfig};
use crate::verify::FuzzHarness;

/// Timed iterations per corpus input used by default. A larger figure
/// (1,000,000) is also common for these harnesses; both are just knobs.
pub const DEFAULT_TIMED_ITERS: u64 = 10_000;
pub const APPENDIX_TIMED_ITERS: u64 = 1_000_000;
pub const DEFAULT_WARMUP_ITERS: u64 = 1_000;

/// Only one benchmark may run on the host at a time.
static BENCH_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("harness transformation failed: {0}")]
    TransformFailure(String),
    #[error("benchmark build failed:\n{0}")]
    BuildFailure(String),
    #[error("benchmark run failed on {input}: {detail}")]
    RunFailure { input: String, detail: String },
    #[error("corpus {0} has no inputs")]
    EmptyCorpus(String),
    #[error("unrecognized benchmark output: {0}")]
    BadOutput(String),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Speedup of `opt` over `base`; 0 unless the pair was verified correct.
pub fn speedup(avg_ns_base: f64, avg_ns_opt: f64, correct: bool) -> f64 {
    if !correct || avg_ns_opt <= 0.0 {
        0.0
    } else {
        avg_ns_base / avg_ns_opt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfRecord {
    pub program_id: String,
    pub correct: bool,
    pub avg_ns_base: f64,
    pub avg_ns_opt: f64,
    pub speedup: f64,
    pub inputs_used: u64,
    pub iters: u64,
    #[serde(default)]
    pub warmup_iters: u64,
}

impl PerfRecord {
    pub fn new(program_id: impl Into<String>, correct: bool, avg_ns_base: f64, avg_ns_opt: f64) -> Self {
        PerfRecord {
            program_id: program_id.into(),
            correct,
            avg_ns_base,
            avg_ns_opt,
            speedup: speedup(avg_ns_base, avg_ns_opt, correct),
            inputs_used: 0,
            iters: 0,
            warmup_iters: 0,
        }
    }

    /// Record for a program whose optimized IR was not verified.
    pub fn incorrect(program_id: impl Into<String>) -> Self {
        Self::new(program_id, false, 0.0, 0.0)
    }

    /// Marks the record incorrect, which forces the speedup to zero.
    pub fn invalidate(&mut self) {
        self.correct = false;
        self.speedup = 0.0;
    }
}

/// A benchmark source derived from a fuzz harness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchHarness {
    pub source: String,
    pub timed_pairs: Vec<(String, String)>,
    pub warmup_iters: u64,
    pub timed_iters: u64,
}

/// Rewrites a fuzz harness into a benchmark. The shipped implementation
/// delegates to an external tool; tests substitute their own.
pub trait BenchDriver {
    fn to_bench(&self, harness: &FuzzHarness, warmup_iters: u64, timed_iters: u64)
        -> Result<BenchHarness, BenchError>;
}

/// Runs `program args...` where `{fuzz_cc}` and `{bench_cc}` in the
/// arguments are replaced by the input harness and output paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalDriver {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

impl BenchDriver for ExternalDriver {
    fn to_bench(
        &self,
        harness: &FuzzHarness,
        warmup_iters: u64,
        timed_iters: u64,
    ) -> Result<BenchHarness, BenchError> {
        let dir = tempfile::tempdir()?;
        let fuzz_cc = dir.path().join("fuzz.cc");
        let bench_cc = dir.path().join("bench.cc");
        std::fs::write(&fuzz_cc, &harness.source)?;
        let mut cmd = Command::new(&self.program);
        for a in &self.args {
            cmd.arg(
                a.replace("{fuzz_cc}", &fuzz_cc.to_string_lossy())
                    .replace("{bench_cc}", &bench_cc.to_string_lossy())
                    .replace("{warmup}", &warmup_iters.to_string())
                    .replace("{iters}", &timed_iters.to_string()),
            );
        }
        let out = run_command(&mut cmd, Some(Duration::from_secs(120)))?;
        if !out.success() {
            return Err(BenchError::TransformFailure(out.combined()));
        }
        let source = std::fs::read_to_string(&bench_cc)
            .map_err(|e| BenchError::TransformFailure(format!("driver wrote no {}: {e}", bench_cc.display())))?;
        Ok(BenchHarness {
            source,
            timed_pairs: harness.function_pairs.clone(),
            warmup_iters,
            timed_iters,
        })
    }
}

/// Compiles the benchmark against an object file of the merged module.
pub fn build_bench(
    bench: &BenchHarness,
    merged_ll: &Path,
    toolchain: &ToolchainConfig,
    workdir: &Path,
) -> Result<PathBuf, BenchError> {
    let llc = toolchain.resolve(Tool::Llc)?;
    let clangxx = toolchain.resolve(Tool::ClangXX)?;
    let obj = workdir.join("bench_merged.o");
    let src = workdir.join("bench.cc");
    let bin = workdir.join("bench");
    std::fs::write(&src, &bench.source)?;
    let limit = Some(Duration::from_secs(600));
    let out = run_command(
        tool_command(&llc).args(["-O2", "-filetype=obj", "-relocation-model=pic"]).arg(merged_ll).arg("-o").arg(&obj),
        limit,
    )?;
    if !out.success() {
        return Err(BenchError::BuildFailure(out.combined()));
    }
    let out = run_command(tool_command(&clangxx).arg("-O2").arg(&src).arg(&obj).arg("-o").arg(&bin), limit)?;
    if !out.success() {
        return Err(BenchError::BuildFailure(out.combined()));
    }
    Ok(bin)
}

/// One benchmark invocation's report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOutput {
    pub iters: u64,
    pub calls_base: u64,
    pub avg_ns_base: f64,
    pub calls_opt: u64,
    pub avg_ns_opt: f64,
}

fn calls_and_avg(line: &str) -> Option<(u64, f64)> {
    let calls = line.split("calls=").nth(1)?.split_whitespace().next()?.parse().ok()?;
    let avg = line.split("avg(ns/call)=").nth(1)?.split_whitespace().next()?.parse().ok()?;
    Some((calls, avg))
}

/// Parses the benchmark's stdout (`iters=`, `baseline calls=… avg(ns/call)=…`,
/// `opt calls=… avg(ns/call)=…`).
pub fn parse_bench_output(stdout: &str) -> Result<BenchOutput, BenchError> {
    let bad = || BenchError::BadOutput(stdout.lines().take(5).collect::<Vec<_>>().join(" | "));
    let mut iters = None;
    let mut base = None;
    let mut opt = None;
    for line in stdout.lines() {
        let t = line.trim();
        if let Some(v) = t.strip_prefix("iters=") {
            iters = v.trim().parse().ok();
        } else if t.starts_with("baseline") {
            base = calls_and_avg(t);
        } else if t.starts_with("opt") {
            opt = calls_and_avg(t);
        }
    }
    let ((calls_base, avg_ns_base), (calls_opt, avg_ns_opt)) = (base.ok_or_else(bad)?, opt.ok_or_else(bad)?);
    Ok(BenchOutput {
        iters: iters.unwrap_or(0),
        calls_base,
        avg_ns_base,
        calls_opt,
        avg_ns_opt,
    })
}

/// Call-weighted mean per-call time across inputs: (base, opt).
pub fn weighted_means(outputs: &[BenchOutput]) -> (f64, f64) {
    let mean = |pairs: &mut dyn Iterator<Item = (u64, f64)>| {
        let (mut calls, mut total) = (0u64, 0.0f64);
        for (c, avg) in pairs {
            calls += c;
            total += c as f64 * avg;
        }
        if calls == 0 {
            0.0
        } else {
            total / calls as f64
        }
    };
    (
        mean(&mut outputs.iter().map(|o| (o.calls_base, o.avg_ns_base))),
        mean(&mut outputs.iter().map(|o| (o.calls_opt, o.avg_ns_opt))),
    )
}

fn corpus_inputs(corpus: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(corpus)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(BenchError::EmptyCorpus(corpus.display().to_string()));
    }
    Ok(files)
}

/// Runs `bench_binary <input> <iters>` for every corpus file and folds the
/// results into one record. A failing run marks the record incorrect.
pub fn run_bench(
    program_id: &str,
    bench_binary: &Path,
    corpus: &Path,
    timed_iters: u64,
    warmup_iters: u64,
) -> Result<PerfRecord, BenchError> {
    let inputs = corpus_inputs(corpus)?;
    let _guard = BENCH_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let mut outputs = Vec::new();
    for input in &inputs {
        let out = run_command(
            tool_command(bench_binary).arg(input).arg(timed_iters.to_string()),
            Some(Duration::from_secs(600)),
        )?;
        if !out.success() {
            return Err(BenchError::RunFailure {
                input: input.display().to_string(),
                detail: format!("exit {:?}\n{}", out.exit_code(), out.combined()),
            });
        }
        // empty inputs print nothing and are not counted
        if out.stdout.trim().is_empty() {
            continue;
        }
        outputs.push(parse_bench_output(&out.stdout)?);
    }
    let (b, o) = weighted_means(&outputs);
    let mut rec = PerfRecord::new(program_id, true, b, o);
    rec.inputs_used = outputs.len() as u64;
    rec.iters = timed_iters;
    rec.warmup_iters = warmup_iters;
    Ok(rec)
}

/// Like [`run_bench`] but folds a run failure into an incorrect record.
pub fn run_bench_record(
    program_id: &str,
    bench_binary: &Path,
    corpus: &Path,
    timed_iters: u64,
    warmup_iters: u64,
) -> Result<PerfRecord, BenchError> {
    match run_bench(program_id, bench_binary, corpus, timed_iters, warmup_iters) {
        Err(BenchError::RunFailure { input, detail }) => {
            log::warn!("{program_id}: benchmark failed on {input}: {detail}");
            let mut r = PerfRecord::incorrect(program_id);
            r.iters = timed_iters;
            r.warmup_iters = warmup_iters;
            Ok(r)
        }
        other => other,
    }
}
