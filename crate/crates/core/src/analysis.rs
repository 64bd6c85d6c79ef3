//! Runs `opt` print passes for the analyses a strategy depends on and
//! collects their text verbatim.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ir::IrProgram;
use crate::toolchain::{run_command, tool_command, Tool, ToolError, ToolchainConfig};

pub const DEFAULT_ANALYSIS_TIMEOUT: Duration = Duration::from_secs(30);

const BUILTIN_MAP: &str = include_str!("../data/analysis_map.json");

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("cannot read name map {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed name map: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Tool(#[from] ToolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Module,
    Function,
    Loop,
}

/// Scope `opt -p=` dispatches a print pass at.
pub fn scope_of(print_pass: &str) -> Scope {
    const MODULE: &[&str] = &[
        "print-callgraph",
        "print-lcg",
        "print<inline-advisor>",
        "print-profile-summary",
        "print-stack-safety",
        "print<module-debuginfo>",
    ];
    const LOOP: &[&str] = &["print<iv-users>", "print<ddg>", "print<loopnest>", "print<loop-cache-cost>"];
    if MODULE.contains(&print_pass) {
        Scope::Module
    } else if LOOP.contains(&print_pass) {
        Scope::Loop
    } else {
        Scope::Function
    }
}

/// Analysis class name -> `opt` print-pass string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnalysisNameMap {
    pub entries: BTreeMap<String, String>,
}

impl Default for AnalysisNameMap {
    fn default() -> Self {
        Self::builtin()
    }
}

impl AnalysisNameMap {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_MAP).expect("built-in analysis map is valid JSON")
    }

    pub fn from_json(text: &str) -> Result<Self, AnalysisError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        let text = std::fs::read_to_string(path).map_err(|source| AnalysisError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn get(&self, analysis: &str) -> Option<&str> {
        self.entries.get(analysis).map(String::as_str)
    }

    /// Checks every mapped string against `opt --print-passes`. Returns the
    /// analyses whose print pass the installed `opt` does not know.
    pub fn validate(&self, toolchain: &ToolchainConfig) -> Result<Vec<String>, AnalysisError> {
        let opt = toolchain.resolve(Tool::Opt)?;
        let out = run_command(tool_command(&opt).arg("--print-passes"), Some(DEFAULT_ANALYSIS_TIMEOUT))?;
        let known: Vec<&str> = out.stdout.split_whitespace().collect();
        Ok(self
            .entries
            .iter()
            .filter(|(_, p)| !known.iter().any(|k| k.starts_with(p.as_str())))
            .map(|(a, _)| a.clone())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Ok,
    /// No print pass is known for the analysis.
    Skipped,
    ToolFailure,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Stderr,
    Stdout,
    Both,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisItem {
    pub analysis_id: String,
    pub print_pass: Option<String>,
    pub scope: Option<Scope>,
    /// Tool output, stderr then stdout.
    pub payload: String,
    pub stream: Stream,
    pub status: ItemStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub for_program: String,
    /// One item per analysis, in analysis-id order.
    pub items: Vec<AnalysisItem>,
}

impl AnalysisBundle {
    pub fn empty(program_id: &str) -> Self {
        AnalysisBundle {
            for_program: program_id.to_string(),
            items: Vec::new(),
        }
    }
}

fn skipped(analysis: &str) -> AnalysisItem {
    AnalysisItem {
        analysis_id: analysis.to_string(),
        print_pass: None,
        scope: None,
        payload: String::new(),
        stream: Stream::None,
        status: ItemStatus::Skipped,
        exit_code: None,
    }
}

fn run_print_pass(opt: &Path, ir_file: &Path, print_pass: &str, timeout: Duration) -> (String, Stream, ItemStatus, Option<i32>) {
    let result = run_command(
        tool_command(opt)
            .arg(format!("-p={print_pass}"))
            .arg("-disable-output")
            .arg(ir_file),
        Some(timeout),
    );
    match result {
        Err(e) => (e.to_string(), Stream::None, ItemStatus::ToolFailure, None),
        Ok(out) => {
            let stream = match (out.stderr.is_empty(), out.stdout.is_empty()) {
                (false, false) => Stream::Both,
                (false, true) => Stream::Stderr,
                (true, false) => Stream::Stdout,
                (true, true) => Stream::None,
            };
            let status = if out.timed_out {
                ItemStatus::Timeout
            } else if out.success() {
                ItemStatus::Ok
            } else {
                ItemStatus::ToolFailure
            };
            (format!("{}{}", out.stderr, out.stdout), stream, status, out.exit_code())
        }
    }
}

/// Collects one item per analysis. Print passes run in parallel on a
/// private copy of the program; each distinct print pass runs once.
pub fn collect_analysis(
    program: &IrProgram,
    analyses: &BTreeSet<String>,
    name_map: &AnalysisNameMap,
    toolchain: &ToolchainConfig,
) -> Result<AnalysisBundle, AnalysisError> {
    collect_analysis_with_timeout(program, analyses, name_map, toolchain, DEFAULT_ANALYSIS_TIMEOUT)
}

pub fn collect_analysis_with_timeout(
    program: &IrProgram,
    analyses: &BTreeSet<String>,
    name_map: &AnalysisNameMap,
    toolchain: &ToolchainConfig,
    timeout: Duration,
) -> Result<AnalysisBundle, AnalysisError> {
    let passes: BTreeSet<&str> = analyses.iter().filter_map(|a| name_map.get(a)).collect();
    let mut outputs = BTreeMap::new();
    if !passes.is_empty() {
        let opt = toolchain.resolve(Tool::Opt)?;
        let dir = tempfile::tempdir().map_err(|source| AnalysisError::Io {
            path: "<tempdir>".into(),
            source,
        })?;
        let file = program.write_to(dir.path(), "input.ll").map_err(|source| AnalysisError::Io {
            path: dir.path().display().to_string(),
            source,
        })?;
        outputs = std::thread::scope(|s| {
            let handles: Vec<_> = passes
                .iter()
                .map(|&p| {
                    let (opt, file) = (&opt, &file);
                    (p, s.spawn(move || run_print_pass(opt, file, p, timeout)))
                })
                .collect();
            handles
                .into_iter()
                .map(|(p, h)| (p, h.join().expect("print pass thread")))
                .collect::<BTreeMap<_, _>>()
        });
    }

    let items = analyses
        .iter()
        .map(|a| match name_map.get(a) {
            None => skipped(a),
            Some(p) => {
                let (payload, stream, status, exit_code) = outputs[p].clone();
                AnalysisItem {
                    analysis_id: a.clone(),
                    print_pass: Some(p.to_string()),
                    scope: Some(scope_of(p)),
                    payload,
                    stream,
                    status,
                    exit_code,
                }
            }
        })
        .collect();
    Ok(AnalysisBundle {
        for_program: program.id.clone(),
        items,
    })
}

/// Text for the `<analysis>` prompt slot: one headed section per collected
/// analysis; anything not collected is listed in a trailing comment.
pub fn render_bundle(bundle: &AnalysisBundle) -> String {
    let mut sections = Vec::new();
    let mut left_out = Vec::new();
    for item in &bundle.items {
        match (item.status, &item.print_pass) {
            (ItemStatus::Ok, Some(p)) => {
                let body = item.payload.trim_end_matches('\n');
                sections.push(format!("; ===== {} ({p}) =====\n{body}\n", item.analysis_id));
            }
            (status, _) => {
                let why = match status {
                    ItemStatus::Skipped => "no print pass",
                    ItemStatus::Timeout => "timeout",
                    _ => "tool failure",
                };
                left_out.push(format!("{} ({why})", item.analysis_id));
            }
        }
    }
    let mut out = sections.join("\n");
    if !left_out.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("; not collected: {}\n", left_out.join(", ")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, status: ItemStatus, payload: &str) -> AnalysisItem {
        AnalysisItem {
            analysis_id: id.into(),
            print_pass: (status != ItemStatus::Skipped).then(|| format!("print<{}>", id.to_lowercase())),
            scope: Some(Scope::Function),
            payload: payload.into(),
            stream: Stream::Stderr,
            status,
            exit_code: Some(0),
        }
    }

    #[test]
    fn builtin_map_covers_common_analyses() {
        let m = AnalysisNameMap::builtin();
        assert_eq!(m.get("DominatorTreeAnalysis"), Some("print<domtree>"));
        assert_eq!(m.get("LoopAnalysis"), Some("print<loops>"));
        assert_eq!(m.get("ScalarEvolutionAnalysis"), Some("print<scalar-evolution>"));
        assert!(m.get("TargetLibraryAnalysis").is_none());
        assert_eq!(scope_of("print-callgraph"), Scope::Module);
        assert_eq!(scope_of("print<loops>"), Scope::Function);
    }

    #[test]
    fn render_empty_bundle() {
        assert_eq!(render_bundle(&AnalysisBundle::empty("p")), "");
    }

    #[test]
    fn render_two_sections_and_skip_note() {
        let b = AnalysisBundle {
            for_program: "p".into(),
            items: vec![
                item("DominatorTreeAnalysis", ItemStatus::Ok, "tree\n\n"),
                item("LoopAnalysis", ItemStatus::Ok, "loops"),
                item("TargetLibraryAnalysis", ItemStatus::Skipped, ""),
            ],
        };
        let r = render_bundle(&b);
        assert_eq!(
            r,
            "; ===== DominatorTreeAnalysis (print<dominatortreeanalysis>) =====\ntree\n\n\
             ; ===== LoopAnalysis (print<loopanalysis>) =====\nloops\n\n\
             ; not collected: TargetLibraryAnalysis (no print pass)\n"
        );
    }

    #[test]
    fn only_skipped_items() {
        let b = AnalysisBundle {
            for_program: "p".into(),
            items: vec![item("X", ItemStatus::Skipped, "")],
        };
        assert_eq!(render_bundle(&b), "; not collected: X (no print pass)\n");
    }
}
