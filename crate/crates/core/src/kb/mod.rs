//! Knowledge base of transform passes: `(id, description, analysis deps)`
//! records mined from an LLVM source checkout and its pass documentation.

pub mod deps;
pub mod docs;
pub mod registry;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};

pub use deps::{extract_deps, DepOptions, DepScan, Evidence, Locator, SourceTree};
pub use docs::attach_descriptions;
pub use registry::{extract_pass_registry, scan_registry, RegistryScan};

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("registry parse error: {0}")]
    Parse(String),
    #[error("no implementation file found for {0}")]
    SourceNotFound(String),
    #[error("knowledge base build produced no entries")]
    BuildEmpty,
    #[error("malformed knowledge base file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("duplicate pass id {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassEntry {
    pub id: String,
    pub desc: String,
    pub deps: BTreeSet<String>,
    /// Registry strings the pass is registered under.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub names: Vec<String>,
    #[serde(rename = "evidence", default)]
    pub source_locations: Vec<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    pub entries: BTreeMap<String, PassEntry>,
    pub llvm_version: String,
    pub built_at: String,
}

/// On-disk layout: entries as a list sorted by id.
#[derive(Serialize, Deserialize)]
struct KbFile {
    llvm_version: String,
    built_at: String,
    entries: Vec<PassEntry>,
}

impl KnowledgeBase {
    pub fn from_entries(entries: impl IntoIterator<Item = PassEntry>, llvm_version: &str, built_at: &str) -> Result<Self, KbError> {
        let mut map = BTreeMap::new();
        for e in entries {
            if map.contains_key(&e.id) {
                return Err(KbError::DuplicateId(e.id));
            }
            map.insert(e.id.clone(), e);
        }
        Ok(KnowledgeBase {
            entries: map,
            llvm_version: llvm_version.to_string(),
            built_at: built_at.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PassEntry> {
        self.entries.get(id)
    }

    pub fn to_json(&self) -> String {
        let file = KbFile {
            llvm_version: self.llvm_version.clone(),
            built_at: self.built_at.clone(),
            entries: self.entries.values().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("knowledge base serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, KbError> {
        let file: KbFile = serde_json::from_str(text)?;
        Self::from_entries(file.entries, &file.llvm_version, &file.built_at)
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        std::fs::write(path, self.to_json()).map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub deps: DepOptions,
    /// Overrides the `built_at` stamp (RFC 3339).
    pub built_at: Option<String>,
}

/// Knowledge base plus diagnostics from the build.
#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub kb: KnowledgeBase,
    pub warnings: Vec<String>,
    /// Registry transforms with no implementation under `lib/Transforms`.
    pub unlocated: Vec<String>,
}

/// Accepts either the `llvm/` directory itself or a monorepo root.
fn llvm_root(root: &Path) -> Option<PathBuf> {
    [root.to_path_buf(), root.join("llvm")]
        .into_iter()
        .find(|r| r.join("lib/Passes/PassRegistry.def").is_file())
}

fn read_llvm_version(root: &Path) -> String {
    let re = regex::Regex::new(r"set\s*\(\s*LLVM_VERSION_(MAJOR|MINOR|PATCH)\s+(\d+)").expect("valid regex");
    for candidate in ["cmake/Modules/LLVMVersion.cmake", "CMakeLists.txt"] {
        let Ok(text) = std::fs::read_to_string(root.join(candidate)) else {
            continue;
        };
        let mut parts: BTreeMap<String, String> = BTreeMap::new();
        for c in re.captures_iter(&text) {
            parts.entry(c[1].to_string()).or_insert_with(|| c[2].to_string());
        }
        if let (Some(ma), Some(mi), Some(pa)) = (parts.get("MAJOR"), parts.get("MINOR"), parts.get("PATCH")) {
            return format!("{ma}.{mi}.{pa}");
        }
    }
    "unknown".to_string()
}

/// `SOURCE_DATE_EPOCH` when set, else the newest modification time among
/// the build inputs, so identical inputs give identical files.
fn deterministic_stamp(inputs: &[PathBuf]) -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<i64>().ok())
        .unwrap_or_else(|| {
            inputs
                .iter()
                .filter_map(|p| std::fs::metadata(p).ok()?.modified().ok())
                .max()
                .and_then(|t| t.duration_since(SystemTime::UNIX_EPOCH).ok())
                .map(|d| d.as_secs() as i64)
                .unwrap_or(0)
        });
    chrono::DateTime::from_timestamp(secs, 0)
        .unwrap_or_default()
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Builds the knowledge base from an LLVM checkout and documentation text.
pub fn build_kb(llvm_source_root: &Path, docs_source: &str, options: &BuildOptions) -> Result<BuildOutcome, KbError> {
    let Some(root) = llvm_root(llvm_source_root) else {
        return Err(KbError::BuildEmpty);
    };
    let registry_path = root.join("lib/Passes/PassRegistry.def");
    let registry_text = std::fs::read_to_string(&registry_path).map_err(|source| KbError::Io {
        path: registry_path.display().to_string(),
        source,
    })?;
    let scan = scan_registry(&registry_text)?;
    let tree = SourceTree::load(&root.join("lib/Transforms"))?;

    let is_dep = |name: &str| deps::is_analysis_name(name) || scan.is_analysis(name);

    let mut warnings = Vec::new();
    let mut unlocated = Vec::new();
    let mut located = Vec::new();
    for t in &scan.transforms {
        match deps::extract_deps_in(&t.class_name, &tree, options.deps, &is_dep) {
            Ok(dep_scan) => {
                warnings.extend(dep_scan.warnings.iter().cloned());
                located.push((t, dep_scan));
            }
            Err(KbError::SourceNotFound(id)) => unlocated.push(id),
            Err(e) => return Err(e),
        }
    }
    if located.is_empty() {
        return Err(KbError::BuildEmpty);
    }

    let id_names: Vec<(String, Vec<String>)> = located
        .iter()
        .map(|(t, _)| (t.class_name.clone(), t.names.clone()))
        .collect();
    let descs = attach_descriptions(&id_names, docs_source);

    let mut inputs = vec![registry_path];
    let entries: Vec<PassEntry> = located
        .into_iter()
        .map(|(t, dep_scan)| {
            inputs.extend(dep_scan.files.iter().map(|f| tree.root().join(f)));
            PassEntry {
                id: t.class_name.clone(),
                desc: descs[&t.class_name].clone(),
                deps: dep_scan.deps,
                names: t.names.clone(),
                source_locations: dep_scan.evidence,
            }
        })
        .collect();

    let built_at = options
        .built_at
        .clone()
        .unwrap_or_else(|| deterministic_stamp(&inputs));
    let kb = KnowledgeBase::from_entries(entries, &read_llvm_version(&root), &built_at)?;
    Ok(BuildOutcome {
        kb,
        warnings,
        unlocated,
    })
}
