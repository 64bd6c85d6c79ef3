//! Scanner for `PassRegistry.def` macro entries.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use super::KbError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassLevel {
    Module,
    Cgscc,
    Function,
    LoopNest,
    Loop,
}

/// One pass class with every registry string it is registered under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub class_name: String,
    pub names: Vec<String>,
    pub level: PassLevel,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegistryScan {
    pub transforms: Vec<RegistryEntry>,
    pub analyses: Vec<RegistryEntry>,
}

impl RegistryScan {
    pub fn transform_ids(&self) -> Vec<String> {
        self.transforms.iter().map(|e| e.class_name.clone()).collect()
    }

    pub fn is_analysis(&self, class_name: &str) -> bool {
        self.analyses.iter().any(|e| e.class_name == class_name)
    }
}

fn macro_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b(MODULE|CGSCC|FUNCTION|LOOPNEST|LOOP)_(PASS_WITH_PARAMS|PASS|ALIAS_ANALYSIS|ANALYSIS)\s*\(")
            .expect("valid regex")
    })
}

/// Registry strings of passes that only print, verify or manipulate analysis
/// caches; they are not optimizations.
fn is_utility_name(name: &str) -> bool {
    ["print", "require<", "invalidate<", "verify", "dot-", "view-"]
        .iter()
        .any(|p| name.starts_with(p))
}

/// Blanks preprocessor lines and `//` comments, preserving line structure.
fn strip_noise(source: &str) -> String {
    source
        .lines()
        .map(|line| {
            let t = line.trim_start();
            if t.starts_with('#') {
                String::new()
            } else if let Some(idx) = find_line_comment(line) {
                line[..idx].to_string()
            } else {
                line.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn find_line_comment(line: &str) -> Option<usize> {
    let bytes = line.as_bytes();
    let mut in_str = false;
    let mut i = 0;
    while i + 1 < bytes.len() {
        match bytes[i] {
            b'\\' if in_str => i += 1,
            b'"' => in_str = !in_str,
            b'/' if !in_str && bytes[i + 1] == b'/' => return Some(i),
            _ => {}
        }
        i += 1;
    }
    None
}

/// Splits the balanced argument list starting right after `(` at `open`.
/// Returns the arguments and the offset just past the closing `)`.
fn macro_args(text: &str, open: usize) -> Option<(Vec<String>, usize)> {
    let bytes = text.as_bytes();
    let mut depth = 1i32;
    let mut angle = 0i32;
    let mut in_str = false;
    let mut start = open;
    let mut args = Vec::new();
    let mut i = open;
    while i < bytes.len() {
        let b = bytes[i];
        if in_str {
            match b {
                b'\\' => i += 1,
                b'"' => in_str = false,
                _ => {}
            }
        } else {
            match b {
                b'"' => in_str = true,
                b'(' | b'[' | b'{' => depth += 1,
                b'<' => angle += 1,
                b'>' if angle > 0 => angle -= 1,
                b')' | b']' | b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        args.push(text[start..i].trim().to_string());
                        return Some((args, i + 1));
                    }
                }
                b',' if depth == 1 && angle == 0 => {
                    args.push(text[start..i].trim().to_string());
                    start = i + 1;
                }
                _ => {}
            }
        }
        i += 1;
    }
    None
}

fn string_literal(arg: &str) -> Option<String> {
    let a = arg.trim();
    let inner = a.strip_prefix('"')?.strip_suffix('"')?;
    Some(inner.replace("\\\"", "\""))
}

/// `llvm::LoopVectorizePass(Opts)` -> `LoopVectorizePass`
fn class_of_expr(expr: &str) -> Option<String> {
    let mut e = expr.trim().trim_start_matches("::");
    while let Some(rest) = e.strip_prefix("llvm::") {
        e = rest;
    }
    let ident: String = e
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_' || *c == ':')
        .collect();
    let ident = ident.rsplit("::").next().unwrap_or("").to_string();
    if ident.is_empty() || !ident.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
        None
    } else {
        Some(ident)
    }
}

fn level_of(prefix: &str) -> PassLevel {
    match prefix {
        "MODULE" => PassLevel::Module,
        "CGSCC" => PassLevel::Cgscc,
        "FUNCTION" => PassLevel::Function,
        "LOOPNEST" => PassLevel::LoopNest,
        _ => PassLevel::Loop,
    }
}

fn push_entry(list: &mut Vec<RegistryEntry>, index: &mut HashMap<String, usize>, entry: RegistryEntry) {
    match index.get(&entry.class_name) {
        Some(&i) => {
            for n in entry.names {
                if !list[i].names.contains(&n) {
                    list[i].names.push(n);
                }
            }
        }
        None => {
            index.insert(entry.class_name.clone(), list.len());
            list.push(entry);
        }
    }
}

/// Scans `PassRegistry.def` text. Transform classes are deduplicated and kept
/// in first-seen order; analysis classes are collected the same way.
pub fn scan_registry(source: &str) -> Result<RegistryScan, KbError> {
    let text = strip_noise(source);
    let mut scan = RegistryScan::default();
    let mut t_index = HashMap::new();
    let mut a_index = HashMap::new();
    let mut recognized = 0usize;

    let mut pos = 0;
    while let Some(m) = macro_re().captures_at(&text, pos) {
        let whole = m.get(0).expect("match");
        let level = level_of(&m[1]);
        let kind = m[2].to_string();
        let Some((args, end)) = macro_args(&text, whole.end()) else {
            break;
        };
        pos = end;
        let line = text[..whole.start()].matches('\n').count() + 1;
        let Some(name) = args.first().and_then(|a| string_literal(a)) else {
            continue;
        };
        let class = match kind.as_str() {
            "PASS_WITH_PARAMS" => args.get(1).and_then(|a| string_literal(a)),
            _ => args.get(1).and_then(|a| class_of_expr(a)),
        };
        let Some(class_name) = class else {
            continue;
        };
        recognized += 1;
        let entry = RegistryEntry {
            class_name,
            names: vec![name.clone()],
            level,
            line,
        };
        if kind.ends_with("ANALYSIS") {
            push_entry(&mut scan.analyses, &mut a_index, entry);
        } else if !is_utility_name(&name) {
            push_entry(&mut scan.transforms, &mut t_index, entry);
        }
    }

    if recognized == 0 {
        return Err(KbError::Parse("no recognizable pass registry entries".into()));
    }
    Ok(scan)
}

/// Transform pass ids only, in source order.
pub fn extract_pass_registry(registry_source: &str) -> Result<Vec<String>, KbError> {
    Ok(scan_registry(registry_source)?.transform_ids())
}
