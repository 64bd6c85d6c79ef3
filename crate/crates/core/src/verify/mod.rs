//! Two-stage correctness checking: Alive2 first, then differential fuzzing
//! when the formal check cannot decide.

pub mod alive;
pub mod fuzz;
pub mod harness;
pub mod merge;

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ir::IrPair;
use crate::llm::LlmBackend;
use crate::pipeline::prompts::StagePromptSet;
use crate::toolchain::ToolchainConfig;

pub use alive::alive_check;
pub use fuzz::{build_fuzzer, replay_crash, run_diff_fuzz, FuzzOptions};
pub use harness::{llm_harness, template_harness, FuzzHarness, HarnessProvenance};
pub use merge::{merge_for_diff, MergedModule, SymbolClash};

pub const DEFAULT_FUZZ_RUNS: u64 = 200_000;
pub const DEFAULT_ALIVE_TIMEOUT_S: u64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Alive2,
    DiffTest,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Equivalent,
    Inequivalent,
    Alive2Timeout,
    Alive2Unsupported,
    FuzzCrash,
    BuildFailure,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub method: Method,
    pub status: VerdictStatus,
    pub detail: String,
    pub fuzz_runs_completed: u64,
    /// Crashing (or hanging) input saved by the fuzzer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reproducer: Option<PathBuf>,
}

impl VerificationVerdict {
    /// Only an equivalent verdict counts as correct downstream.
    pub fn is_correct(&self) -> bool {
        self.status == VerdictStatus::Equivalent
    }

    fn none(status: VerdictStatus, detail: impl Into<String>) -> Self {
        VerificationVerdict {
            method: Method::None,
            status,
            detail: detail.into(),
            fuzz_runs_completed: 0,
            reproducer: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum HarnessMode {
    #[default]
    Template,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub runs: u64,
    pub fuzz_budget_s: u64,
    pub input_timeout_s: u64,
    pub seed: u64,
    pub alive_timeout_s: u64,
    pub alive_flags: Vec<String>,
    pub harness_mode: HarnessMode,
    /// Skip Alive2 even when it is installed.
    pub skip_alive: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let f = FuzzOptions::default();
        VerifyConfig {
            runs: DEFAULT_FUZZ_RUNS,
            fuzz_budget_s: f.budget.as_secs(),
            input_timeout_s: f.input_timeout_s,
            seed: f.seed,
            alive_timeout_s: DEFAULT_ALIVE_TIMEOUT_S,
            alive_flags: Vec::new(),
            harness_mode: HarnessMode::Template,
            skip_alive: false,
        }
    }
}

impl VerifyConfig {
    pub fn fuzz_options(&self) -> FuzzOptions {
        FuzzOptions {
            runs: self.runs,
            budget: Duration::from_secs(self.fuzz_budget_s),
            input_timeout_s: self.input_timeout_s,
            seed: self.seed,
        }
    }
}

/// Model access for LLM-mode harness generation.
pub struct HarnessBackend<'a> {
    pub backend: &'a dyn LlmBackend,
    pub prompts: &'a StagePromptSet,
}

/// Artifacts of a differential run, kept for the benchmark stage.
#[derive(Debug, Clone)]
pub struct DiffArtifacts {
    pub merged: MergedModule,
    pub harness: FuzzHarness,
    pub binary: PathBuf,
    pub corpus: PathBuf,
}

/// Full verification of one pair inside `workdir` (one directory per pair).
pub fn verify(
    pair: &IrPair,
    config: &VerifyConfig,
    toolchain: &ToolchainConfig,
    llm: Option<&HarnessBackend<'_>>,
    workdir: &Path,
) -> VerificationVerdict {
    verify_with_artifacts(pair, config, toolchain, llm, workdir).0
}

pub fn verify_with_artifacts(
    pair: &IrPair,
    config: &VerifyConfig,
    toolchain: &ToolchainConfig,
    llm: Option<&HarnessBackend<'_>>,
    workdir: &Path,
) -> (VerificationVerdict, Option<DiffArtifacts>) {
    let alive_note = if config.skip_alive {
        "alive2 disabled by configuration".to_string()
    } else {
        match alive_check(pair, toolchain, config.alive_timeout_s, &config.alive_flags, workdir) {
            Ok(v) if matches!(v.status, VerdictStatus::Equivalent | VerdictStatus::Inequivalent) => return (v, None),
            Ok(v) => format!("{:?}: {}", v.status, first_line(&v.detail)),
            Err(e) => format!("alive2 tool failure: {}", first_line(&e.to_string())),
        }
    };
    let with_note = |mut v: VerificationVerdict| {
        v.detail = format!("[{alive_note}]\n{}", v.detail);
        v
    };

    if let Some(reason) = fuzz::ineligibility(pair) {
        return (with_note(VerificationVerdict::none(VerdictStatus::Skipped, reason)), None);
    }
    let merged = match merge_for_diff(pair) {
        Ok(m) => m,
        Err(e) => {
            return (
                with_note(VerificationVerdict::none(VerdictStatus::BuildFailure, e.to_string())),
                None,
            )
        }
    };
    let harness = match (config.harness_mode, llm) {
        (HarnessMode::Llm, Some(b)) => llm_harness(&merged, b.backend, b.prompts),
        (HarnessMode::Llm, None) => {
            return (
                with_note(VerificationVerdict::none(
                    VerdictStatus::Skipped,
                    "llm harness mode requested without a backend",
                )),
                None,
            )
        }
        (HarnessMode::Template, _) => template_harness(&merged),
    };
    let harness = match harness {
        Ok(h) => h,
        Err(e) => return (with_note(VerificationVerdict::none(VerdictStatus::Skipped, e.to_string())), None),
    };
    let binary = match build_fuzzer(&merged, &harness, toolchain, workdir) {
        Ok(b) => b,
        Err(e) => {
            let v = VerificationVerdict {
                method: Method::DiffTest,
                status: VerdictStatus::BuildFailure,
                detail: e.to_string(),
                fuzz_runs_completed: 0,
                reproducer: None,
            };
            return (with_note(v), None);
        }
    };
    let corpus = workdir.join("corpus");
    let verdict = match run_diff_fuzz(&binary, &corpus, workdir, &config.fuzz_options()) {
        Ok(v) => v,
        Err(e) => VerificationVerdict {
            method: Method::DiffTest,
            status: VerdictStatus::Skipped,
            detail: e.to_string(),
            fuzz_runs_completed: 0,
            reproducer: None,
        },
    };
    (
        with_note(verdict),
        Some(DiffArtifacts {
            merged,
            harness,
            binary,
            corpus,
        }),
    )
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{IrProgram, Origin, Provenance};

    #[test]
    fn verdict_serialization() {
        let v = VerificationVerdict::none(VerdictStatus::Alive2Timeout, "x");
        let j = serde_json::to_value(&v).unwrap();
        assert_eq!(j["method"], "none");
        assert_eq!(j["status"], "alive2_timeout");
        assert!(j.get("reproducer").is_none());
    }

    #[test]
    fn ineligible_pair_is_skipped_not_dropped() {
        let t = "declare i32 @rand()\ndefine i32 @f() {\n  %r = call i32 @rand()\n  ret i32 %r\n}\n";
        let p = IrProgram::new("p", t, Origin::Input);
        let pair = IrPair::new(p.clone(), p, Provenance::LlmPipeline);
        let dir = tempfile::tempdir().unwrap();
        let cfg = VerifyConfig {
            skip_alive: true,
            ..Default::default()
        };
        let v = verify(&pair, &cfg, &ToolchainConfig::default(), None, dir.path());
        assert_eq!(v.status, VerdictStatus::Skipped);
        assert!(v.detail.contains("@rand"));
    }

    #[test]
    fn missing_toolchain_is_build_failure() {
        let t = "define i32 @f(i32 %x) {\n  ret i32 %x\n}\n";
        let p = IrProgram::new("p", t, Origin::Input);
        let pair = IrPair::new(p.clone(), p, Provenance::LlmPipeline);
        let dir = tempfile::tempdir().unwrap();
        let tc = ToolchainConfig {
            llc: Some("/nonexistent/llc".into()),
            alive_tv: Some("/nonexistent/alive-tv".into()),
            ..Default::default()
        };
        let v = verify(&pair, &VerifyConfig::default(), &tc, None, dir.path());
        assert_eq!(v.status, VerdictStatus::BuildFailure);
        assert_eq!(v.method, Method::DiffTest);
        assert!(v.detail.contains("alive2 not run"));
    }
}
