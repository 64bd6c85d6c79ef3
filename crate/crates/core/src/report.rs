//! Evaluation tables: correctness rates, mean speedup, speedup buckets and
//! pairwise win/tie/loss comparisons between two optimizers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::PerfRecord;
use crate::verify::{Method, VerdictStatus, VerificationVerdict};

pub const BUCKET_THRESHOLDS: [f64; 3] = [1.1, 1.5, 2.0];
pub const DEFAULT_EQUAL_BAND: (f64, f64) = (0.98, 1.02);
pub const MEAN_NOTE: &str =
    "avg speedup is the arithmetic mean over all programs; unverified programs contribute 0";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("program ids differ (only in records: {only_records:?}; only in verdicts: {only_verdicts:?})")]
    KeyMismatch {
        only_records: Vec<String>,
        only_verdicts: Vec<String>,
    },
    #[error("duplicate program id {0}")]
    Duplicate(String),
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Per-program outcome as it enters the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramSummary {
    #[serde(flatten)]
    pub perf: PerfRecord,
    pub method: Method,
    pub status: VerdictStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub threshold: f64,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_programs: usize,
    pub correct_alive2: usize,
    pub correct_combined: usize,
    pub correctness_alive2: f64,
    pub correctness_combined: f64,
    pub avg_speedup: f64,
    pub buckets: Vec<Bucket>,
    pub per_program: Vec<ProgramSummary>,
}

fn fraction(count: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        count as f64 / n as f64
    }
}

/// `90.5% (181)` style rate.
pub fn format_rate(count: usize, n: usize) -> String {
    format!("{:.1}% ({count})", 100.0 * fraction(count, n))
}

/// Speedups print with three decimals, e.g. `2.660×`.
pub fn format_speedup(x: f64) -> String {
    format!("{x:.3}×")
}

impl EvaluationReport {
    /// Builds every summary field from per-program rows.
    pub fn from_programs(per_program: Vec<ProgramSummary>) -> Self {
        let n = per_program.len();
        let correct_combined = per_program.iter().filter(|p| p.status == VerdictStatus::Equivalent).count();
        let correct_alive2 = per_program
            .iter()
            .filter(|p| p.status == VerdictStatus::Equivalent && p.method == Method::Alive2)
            .count();
        let total: f64 = per_program.iter().map(|p| p.perf.speedup).sum();
        let buckets = BUCKET_THRESHOLDS
            .iter()
            .map(|&t| {
                let count = per_program.iter().filter(|p| p.perf.speedup > t).count();
                Bucket {
                    threshold: t,
                    count,
                    fraction: fraction(count, n),
                }
            })
            .collect();
        EvaluationReport {
            n_programs: n,
            correct_alive2,
            correct_combined,
            correctness_alive2: fraction(correct_alive2, n),
            correctness_combined: fraction(correct_combined, n),
            avg_speedup: if n == 0 { 0.0 } else { total / n as f64 },
            buckets,
            per_program,
        }
    }

    pub fn bucket(&self, threshold: f64) -> Option<&Bucket> {
        self.buckets.iter().find(|b| b.threshold == threshold)
    }

    pub fn to_markdown(&self, label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "| Method | Correct (Alive2) | Correct (Combined) | Avg. Speedup | {} |",
            self.buckets
                .iter()
                .map(|b| format!("Speedup > {}×", b.threshold))
                .collect::<Vec<_>>()
                .join(" | ")
        );
        let _ = writeln!(s, "|{}", "---|".repeat(4 + self.buckets.len()));
        let _ = writeln!(
            s,
            "| {label} | {} | {} | {} | {} |",
            format_rate(self.correct_alive2, self.n_programs),
            format_rate(self.correct_combined, self.n_programs),
            format_speedup(self.avg_speedup),
            self.buckets
                .iter()
                .map(|b| format_rate(b.count, self.n_programs))
                .collect::<Vec<_>>()
                .join(" | ")
        );
        let _ = writeln!(s, "\n_{MEAN_NOTE}_");
        s
    }

    /// One row per program, for external plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("program_id,correct,method,status,avg_ns_base,avg_ns_opt,speedup,inputs_used,iters\n");
        for p in &self.per_program {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.3},{},{}",
                csv_field(&p.perf.program_id),
                p.perf.correct,
                enum_name(&p.method),
                enum_name(&p.status),
                p.perf.avg_ns_base,
                p.perf.avg_ns_opt,
                p.perf.speedup,
                p.perf.inputs_used,
                p.perf.iters
            );
        }
        s
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Joins perf records with verdicts by program id. Only equivalent verdicts
/// count as correct; everything else gets speedup 0.
pub fn aggregate(
    records: &[PerfRecord],
    verdicts: &BTreeMap<String, VerificationVerdict>,
) -> Result<EvaluationReport, ReportError> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.program_id.clone()) {
            return Err(ReportError::Duplicate(r.program_id.clone()));
        }
    }
    let keys: BTreeSet<String> = verdicts.keys().cloned().collect();
    if seen != keys {
        return Err(ReportError::KeyMismatch {
            only_records: seen.difference(&keys).cloned().collect(),
            only_verdicts: keys.difference(&seen).cloned().collect(),
        });
    }
    let rows = records
        .iter()
        .map(|r| {
            let v = &verdicts[&r.program_id];
            let mut perf = r.clone();
            if !v.is_correct() {
                perf.invalidate();
            }
            ProgramSummary {
                perf,
                method: v.method,
                status: v.status,
            }
        })
        .collect();
    Ok(EvaluationReport::from_programs(rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Tie,
    Loss,
}

/// Classifies a ratio against an inclusive equal band.
pub fn classify_ratio(ratio: f64, band: (f64, f64)) -> Outcome {
    if ratio < band.0 {
        Outcome::Loss
    } else if ratio > band.1 {
        Outcome::Win
    } else {
        Outcome::Tie
    }
}

/// Ratio of `a`'s speedup to `b`'s; both zero is a tie, a zero on one side
/// only is an unbounded win or loss.
pub fn speedup_ratio(a: f64, b: f64) -> f64 {
    match (a > 0.0, b > 0.0) {
        (true, true) => a / b,
        (false, false) => 1.0,
        (true, false) => f64::INFINITY,
        (false, true) => 0.0,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl Tally {
    pub fn total(&self) -> usize {
        self.wins + self.ties + self.losses
    }

    fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Win => self.wins += 1,
            Outcome::Tie => self.ties += 1,
            Outcome::Loss => self.losses += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub band: (f64, f64),
    /// Outcomes from the first list's point of view.
    pub a: Tally,
    /// The mirror image for the second list.
    pub b: Tally,
    pub per_program: Vec<(String, f64, Outcome)>,
}

impl PairwiseComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("program_id,ratio,outcome\n");
        for (id, r, o) in &self.per_program {
            let _ = writeln!(s, "{},{r:.3},{}", csv_field(id), enum_name(o));
        }
        s
    }
}

pub fn compare_pairwise(
    a: &[PerfRecord],
    b: &[PerfRecord],
    band: (f64, f64),
) -> Result<PairwiseComparison, ReportError> {
    let am: BTreeMap<&str, &PerfRecord> = a.iter().map(|r| (r.program_id.as_str(), r)).collect();
    let bm: BTreeMap<&str, &PerfRecord> = b.iter().map(|r| (r.program_id.as_str(), r)).collect();
    let ak: BTreeSet<&str> = am.keys().copied().collect();
    let bk: BTreeSet<&str> = bm.keys().copied().collect();
    if ak != bk || am.len() != a.len() || bm.len() != b.len() {
        return Err(ReportError::KeyMismatch {
            only_records: ak.difference(&bk).map(|s| s.to_string()).collect(),
            only_verdicts: bk.difference(&ak).map(|s| s.to_string()).collect(),
        });
    }
    let mut out = PairwiseComparison {
        band,
        a: Tally::default(),
        b: Tally::default(),
        per_program: Vec::new(),
    };
    for id in ak {
        let ratio = speedup_ratio(am[id].speedup, bm[id].speedup);
        let o = classify_ratio(ratio, band);
        out.a.add(o);
        out.b.add(match o {
            Outcome::Win => Outcome::Loss,
            Outcome::Loss => Outcome::Win,
            Outcome::Tie => Outcome::Tie,
        });
        out.per_program.push((id.to_string(), ratio, o));
    }
    Ok(out)
}

/// The subset of a results.jsonl line the report needs.
#[derive(Debug, Clone, Deserialize)]
struct ResultLine {
    program_id: String,
    #[serde(default)]
    verdict: Option<VerificationVerdict>,
    #[serde(default)]
    perf: Option<PerfRecord>,
}

/// Reads results.jsonl. Programs without a verdict count as unverified and
/// programs without a perf record get a zero-speedup placeholder.
pub fn load_results(path: &Path) -> Result<EvaluationReport, ReportError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    let mut verdicts = BTreeMap::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ResultLine = serde_json::from_str(&line).map_err(|source| ReportError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        let verdict = r.verdict.unwrap_or(VerificationVerdict {
            method: Method::None,
            status: VerdictStatus::Skipped,
            detail: "no verdict recorded".into(),
            fuzz_runs_completed: 0,
            reproducer: None,
        });
        let perf = r.perf.unwrap_or_else(|| PerfRecord::incorrect(r.program_id.clone()));
        if verdicts.insert(r.program_id.clone(), verdict).is_some() {
            return Err(ReportError::Duplicate(r.program_id));
        }
        records.push(PerfRecord {
            program_id: r.program_id,
            ..perf
        });
    }
    aggregate(&records, &verdicts)
}
