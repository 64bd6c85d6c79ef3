//! Static mining of `getResult<T>` call sites in pass implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::KbError;

/// How the file holding an evidence record was associated with the pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Locator {
    /// The file defines `<PassId>::run...`; only those bodies were scanned.
    RunDefinition,
    /// The file name stem matches the pass name; the whole file was scanned.
    FileStem,
}

/// One `getResult<T>` occurrence backing a dependency.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Evidence {
    pub file: String,
    pub line: usize,
    pub analysis: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cached: bool,
    pub located_by: Locator,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DepOptions {
    /// Count `getCachedResult<T>` as a dependency.
    pub include_cached: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DepScan {
    pub deps: BTreeSet<String>,
    pub evidence: Vec<Evidence>,
    /// Relative paths of the files that were scanned.
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
struct SourceFile {
    rel_path: String,
    stem: String,
    text: String,
}

/// Preloaded and indexed `lib/Transforms` tree.
#[derive(Debug, Clone, Default)]
pub struct SourceTree {
    root: PathBuf,
    files: Vec<SourceFile>,
    /// class name -> indices of files defining `Class::run...`
    run_defs: BTreeMap<String, BTreeSet<usize>>,
    by_stem: BTreeMap<String, Vec<usize>>,
}

fn run_def_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-Za-z_][A-Za-z0-9_]*)::run[A-Za-z0-9_]*\s*\(").expect("valid regex"))
}

fn get_result_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(getResult|getCachedResult)\s*<").expect("valid regex"))
}

impl SourceTree {
    /// Loads every `.cpp`/`.h` file under `root`. A missing root yields an
    /// empty tree.
    pub fn load(root: &Path) -> Result<Self, KbError> {
        let mut tree = SourceTree {
            root: root.to_path_buf(),
            ..Default::default()
        };
        if !root.is_dir() {
            return Ok(tree);
        }
        let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(root)
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("cpp" | "h")))
            .collect();
        paths.sort();
        for path in paths {
            let bytes = std::fs::read(&path).map_err(|source| KbError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let rel_path = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            tree.add(SourceFile {
                rel_path,
                stem,
                text: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        Ok(tree)
    }

    /// Builds a tree from in-memory files (relative path, contents).
    pub fn from_files<I, P, T>(files: I) -> Self
    where
        I: IntoIterator<Item = (P, T)>,
        P: Into<String>,
        T: Into<String>,
    {
        let mut tree = SourceTree::default();
        let mut all: Vec<(String, String)> = files.into_iter().map(|(p, t)| (p.into(), t.into())).collect();
        all.sort();
        for (rel_path, text) in all {
            let stem = Path::new(&rel_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            tree.add(SourceFile { rel_path, stem, text });
        }
        tree
    }

    fn add(&mut self, file: SourceFile) {
        let idx = self.files.len();
        for cap in run_def_re().captures_iter(&file.text) {
            if looks_like_definition(&file.text, cap.get(0).expect("match").end()) {
                self.run_defs.entry(cap[1].to_string()).or_default().insert(idx);
            }
        }
        self.by_stem.entry(file.stem.clone()).or_default().push(idx);
        self.files.push(file);
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Reads back the text of a scanned file by relative path.
    pub fn file_text(&self, rel_path: &str) -> Option<&str> {
        self.files.iter().find(|f| f.rel_path == rel_path).map(|f| f.text.as_str())
    }
}

/// After `Class::run(`, checks that the parameter list is followed by a body
/// rather than `;` (a call or declaration).
fn looks_like_definition(text: &str, after_open: usize) -> bool {
    let Some(close) = matching_close(text, after_open - 1, b'(', b')') else {
        return false;
    };
    let rest = text[close + 1..].trim_start();
    // allow trailing qualifiers like `const` or `override` before the body
    let rest = rest
        .trim_start_matches("const")
        .trim_start()
        .trim_start_matches("override")
        .trim_start();
    rest.starts_with('{')
}

/// Offset of the bracket closing the one at `open`.
fn matching_close(text: &str, open: usize, opener: u8, closer: u8) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0i32;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if b == opener {
            depth += 1;
        } else if b == closer {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

/// Byte ranges of every `<class>::run...(...) { ... }` body in `text`.
fn run_bodies(text: &str, class: &str) -> Vec<(usize, usize)> {
    let mut bodies = Vec::new();
    for cap in run_def_re().captures_iter(text) {
        if &cap[1] != class {
            continue;
        }
        let m = cap.get(0).expect("match");
        let Some(close_paren) = matching_close(text, m.end() - 1, b'(', b')') else {
            continue;
        };
        let Some(rel) = text[close_paren..].find('{') else {
            continue;
        };
        let open = close_paren + rel;
        if text[close_paren + 1..open].contains(';') {
            continue;
        }
        if let Some(close) = matching_close(text, open, b'{', b'}') {
            bodies.push((open, close + 1));
        }
    }
    bodies
}

/// Strips qualifiers and template arguments: `llvm::OuterAnalysisManagerProxy<A, B>` -> `OuterAnalysisManagerProxy`.
pub fn normalize_analysis_name(raw: &str) -> String {
    let head = raw.split('<').next().unwrap_or(raw);
    let head: String = head.chars().filter(|c| !c.is_whitespace()).collect();
    let head = head.trim_start_matches("const");
    head.rsplit("::").next().unwrap_or(head).to_string()
}

/// Finds getResult/getCachedResult call sites in `text[range]`.
fn scan_calls(text: &str, range: (usize, usize)) -> Vec<(usize, String, bool)> {
    let slice = &text[range.0..range.1];
    let mut out = Vec::new();
    for m in get_result_re().captures_iter(slice) {
        let whole = m.get(0).expect("match");
        let cached = &m[1] == "getCachedResult";
        let open = range.0 + whole.end() - 1;
        let Some(close) = matching_close(text, open, b'<', b'>') else {
            continue;
        };
        if close >= range.1 {
            continue;
        }
        // must be a call, not e.g. a declaration `getResult<...>;`
        if !text[close + 1..].trim_start().starts_with('(') {
            continue;
        }
        let raw = &text[open + 1..close];
        out.push((open, normalize_analysis_name(raw), cached));
    }
    out
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset].matches('\n').count() + 1
}

/// Mines the analysis dependencies of `pass_id` from `tree`.
///
/// `is_analysis` decides which normalized names are admissible as deps (the
/// knowledge base passes a check against the analysis registry plus the
/// `...Analysis` naming rule).
pub fn extract_deps_in(
    pass_id: &str,
    tree: &SourceTree,
    options: DepOptions,
    is_analysis: &dyn Fn(&str) -> bool,
) -> Result<DepScan, KbError> {
    let mut candidates: BTreeMap<usize, Locator> = BTreeMap::new();
    if let Some(ids) = tree.run_defs.get(pass_id) {
        for &i in ids {
            candidates.insert(i, Locator::RunDefinition);
        }
    }
    let short = pass_id.strip_suffix("Pass").unwrap_or(pass_id);
    for stem in [pass_id, short] {
        if let Some(ids) = tree.by_stem.get(stem) {
            for &i in ids {
                candidates.entry(i).or_insert(Locator::FileStem);
            }
        }
    }
    if candidates.is_empty() {
        return Err(KbError::SourceNotFound(pass_id.to_string()));
    }

    let mut scan = DepScan::default();
    let mut rejected = BTreeSet::new();
    for (&idx, &locator) in &candidates {
        let file = &tree.files[idx];
        scan.files.push(file.rel_path.clone());
        let ranges = match locator {
            Locator::RunDefinition => run_bodies(&file.text, pass_id),
            Locator::FileStem => vec![(0, file.text.len())],
        };
        for range in ranges {
            for (offset, name, cached) in scan_calls(&file.text, range) {
                if !is_analysis(&name) {
                    rejected.insert(name);
                    continue;
                }
                if cached && !options.include_cached {
                    // recorded for auditing, not counted
                    scan.evidence.push(Evidence {
                        file: file.rel_path.clone(),
                        line: line_of(&file.text, offset),
                        analysis: name,
                        cached: true,
                        located_by: locator,
                    });
                    continue;
                }
                scan.deps.insert(name.clone());
                scan.evidence.push(Evidence {
                    file: file.rel_path.clone(),
                    line: line_of(&file.text, offset),
                    analysis: name,
                    cached,
                    located_by: locator,
                });
            }
        }
    }
    scan.evidence.sort();
    scan.evidence.dedup();
    if !rejected.is_empty() {
        scan.warnings.push(format!(
            "{pass_id}: ignored non-analysis getResult targets {:?}",
            rejected
        ));
    }
    if scan.deps.is_empty() {
        scan.warnings.push(format!("{pass_id}: no getResult call sites found"));
        log::warn!("{pass_id}: no analysis dependencies found in {:?}", scan.files);
    }
    Ok(scan)
}

/// Default admissibility rule: names ending in `Analysis`.
pub fn is_analysis_name(name: &str) -> bool {
    name.ends_with("Analysis")
}

/// Convenience entry point scanning a `lib/Transforms` directory on disk.
pub fn extract_deps(pass_id: &str, transforms_source_root: &Path) -> Result<DepScan, KbError> {
    let tree = SourceTree::load(transforms_source_root)?;
    extract_deps_in(pass_id, &tree, DepOptions::default(), &is_analysis_name)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOOP_VECTORIZE: &str = r#"
#include "llvm/Transforms/Vectorize/LoopVectorize.h"
using namespace llvm;

static bool helper(Function &F, FunctionAnalysisManager &AM) {
  auto &DT = AM.getResult<DominatorTreeAnalysis>(F);
  return DT.isReachableFromEntry(&F.getEntryBlock());
}

PreservedAnalyses LoopVectorizePass::run(Function &F,
                                         FunctionAnalysisManager &AM) {
  auto &LI = AM.getResult<LoopAnalysis>(F);
  auto &TLI = AM.getResult<TargetLibraryAnalysis>(F);
  auto *PSI = AM.getCachedResult<ProfileSummaryAnalysis>(F);
  auto &MAMProxy = AM.getResult<ModuleAnalysisManagerFunctionProxy>(F);
  if (LI.empty()) {
    return PreservedAnalyses::all();
  }
  return PreservedAnalyses::none();
}
"#;

    fn tree() -> SourceTree {
        SourceTree::from_files([
            ("Vectorize/LoopVectorize.cpp", LOOP_VECTORIZE),
            ("Scalar/DCE.cpp", "// no analyses\nPreservedAnalyses DCEPass::run(Function &F, FunctionAnalysisManager &AM) {\n  return PreservedAnalyses::all();\n}\n"),
        ])
    }

    #[test]
    fn scans_only_run_body() {
        let scan = extract_deps_in("LoopVectorizePass", &tree(), DepOptions::default(), &is_analysis_name).unwrap();
        let deps: Vec<_> = scan.deps.iter().map(String::as_str).collect();
        assert_eq!(deps, ["LoopAnalysis", "TargetLibraryAnalysis"]);
        assert_eq!(scan.files, ["Vectorize/LoopVectorize.cpp"]);
        let lines: Vec<_> = scan.evidence.iter().filter(|e| !e.cached).map(|e| e.line).collect();
        assert_eq!(lines, [12, 13]);
        assert!(scan.evidence.iter().any(|e| e.cached && e.analysis == "ProfileSummaryAnalysis"));
        assert!(scan.warnings.iter().any(|w| w.contains("ModuleAnalysisManagerFunctionProxy")));
    }

    #[test]
    fn cached_results_can_be_included() {
        let scan = extract_deps_in(
            "LoopVectorizePass",
            &tree(),
            DepOptions { include_cached: true },
            &is_analysis_name,
        )
        .unwrap();
        assert!(scan.deps.contains("ProfileSummaryAnalysis"));
    }

    #[test]
    fn pass_without_calls_yields_empty_set_with_warning() {
        let scan = extract_deps_in("DCEPass", &tree(), DepOptions::default(), &is_analysis_name).unwrap();
        assert!(scan.deps.is_empty());
        assert!(!scan.warnings.is_empty());
    }

    #[test]
    fn unknown_pass_is_source_not_found() {
        let err = extract_deps_in("NoSuchPass", &tree(), DepOptions::default(), &is_analysis_name).unwrap_err();
        assert!(matches!(err, KbError::SourceNotFound(p) if p == "NoSuchPass"));
    }

    #[test]
    fn normalizes_qualified_and_templated_names() {
        assert_eq!(normalize_analysis_name("llvm::LoopAnalysis"), "LoopAnalysis");
        assert_eq!(normalize_analysis_name(" LoopAnalysis "), "LoopAnalysis");
        assert_eq!(
            normalize_analysis_name("OuterAnalysisManagerProxy<ModuleAnalysisManager, Function>"),
            "OuterAnalysisManagerProxy"
        );
    }
}
