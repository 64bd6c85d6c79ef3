//! Lightweight lexical scanning of textual LLVM IR.
//!
//! This is not a parser. It recognizes top-level `define`/`declare` lines and
//! global variable definitions, and it can rewrite references to globals,
//! attribute groups and numbered metadata while leaving string literals and
//! comments untouched.

use std::collections::BTreeMap;

/// Kinds of module-level references the rewriter reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefKind {
    /// `@name`, `@"quoted name"` or `@N`
    Global,
    /// `#N`
    AttrGroup,
    /// `!N`
    Metadata,
}

/// Walks `text` and calls `f` for every global, attribute-group and numbered
/// metadata reference. Returning `Some(new)` replaces the name (without the
/// sigil); quoting is applied automatically when `new` needs it.
pub fn rewrite_refs<F>(text: &str, mut f: F) -> String
where
    F: FnMut(RefKind, &str) -> Option<String>,
{
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len() + 64);
    let mut i = 0;
    let mut copied = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => {
                i = skip_string(bytes, i);
            }
            b';' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'@' => {
                let start = i;
                let (name, end, _quoted) = match lex_name(text, i + 1) {
                    Some(v) => v,
                    None => {
                        i += 1;
                        continue;
                    }
                };
                if let Some(new) = f(RefKind::Global, &name) {
                    out.push_str(&text[copied..start]);
                    out.push('@');
                    out.push_str(&format_name(&new));
                    copied = end;
                }
                i = end;
            }
            sigil @ (b'#' | b'!') => {
                let start = i;
                let mut j = i + 1;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                // `!0` / `#0`, but not `#dbg_value` or `!llvm.loop`
                let boundary = j == bytes.len() || !is_ident_byte(bytes[j]);
                if j > i + 1 && boundary {
                    let kind = if sigil == b'#' {
                        RefKind::AttrGroup
                    } else {
                        RefKind::Metadata
                    };
                    if let Some(new) = f(kind, &text[i + 1..j]) {
                        out.push_str(&text[copied..start]);
                        out.push(sigil as char);
                        out.push_str(&new);
                        copied = j;
                    }
                    i = j;
                } else if sigil == b'!' && j < bytes.len() && bytes[j] == b'"' {
                    i = skip_string(bytes, j);
                } else {
                    i = j.max(i + 1);
                }
            }
            _ => i += 1,
        }
    }
    out.push_str(&text[copied..]);
    out
}

fn skip_string(bytes: &[u8], quote: usize) -> usize {
    let mut i = quote + 1;
    while i < bytes.len() && bytes[i] != b'"' {
        i += 1;
    }
    (i + 1).min(bytes.len())
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'$' | b'.' | b'_')
}

/// Lexes a global name starting at `at` (just after the `@`).
/// Returns (name, end offset, was_quoted).
fn lex_name(text: &str, at: usize) -> Option<(String, usize, bool)> {
    let bytes = text.as_bytes();
    if at >= bytes.len() {
        return None;
    }
    if bytes[at] == b'"' {
        let end = skip_string(bytes, at);
        let inner = &text[at + 1..end.saturating_sub(1).max(at + 1)];
        return Some((inner.to_string(), end, true));
    }
    let mut j = at;
    while j < bytes.len() && is_ident_byte(bytes[j]) {
        j += 1;
    }
    if j == at {
        return None;
    }
    Some((text[at..j].to_string(), j, false))
}

fn format_name(name: &str) -> String {
    let bare_ok = !name.is_empty()
        && name.bytes().all(is_ident_byte)
        && (name.bytes().all(|b| b.is_ascii_digit()) || !name.as_bytes()[0].is_ascii_digit());
    if bare_ok {
        name.to_string()
    } else {
        format!("\"{name}\"")
    }
}

const LINKAGES: &[&str] = &[
    "private",
    "internal",
    "available_externally",
    "linkonce",
    "weak",
    "common",
    "appending",
    "extern_weak",
    "linkonce_odr",
    "weak_odr",
    "external",
];

/// A `define` found at the top level of a module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    pub linkage: Option<String>,
    /// Return type text as written (last token before the name).
    pub return_type: String,
    /// Parameter list entries as written, split on top-level commas.
    pub params: Vec<String>,
    pub line: usize,
}

impl FunctionDef {
    pub fn is_public(&self) -> bool {
        !matches!(self.linkage.as_deref(), Some("private") | Some("internal"))
    }
}

/// A `declare` (external function).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDecl {
    pub name: String,
    pub line: usize,
}

/// A module-level `@name = ...` definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalVar {
    pub name: String,
    pub linkage: Option<String>,
    /// `external global` without an initializer.
    pub is_external: bool,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModuleSymbols {
    pub functions: Vec<FunctionDef>,
    pub declarations: Vec<FunctionDecl>,
    pub globals: Vec<GlobalVar>,
}

impl ModuleSymbols {
    /// Externally visible functions that form the module's interface.
    /// Discardable definitions (`linkonce*`, `available_externally`, e.g.
    /// inline C++ helpers) may legitimately vanish or appear under
    /// optimization and are left out.
    pub fn public_functions(&self) -> impl Iterator<Item = &FunctionDef> {
        self.functions.iter().filter(|f| {
            f.is_public()
                && !matches!(
                    f.linkage.as_deref(),
                    Some("linkonce") | Some("linkonce_odr") | Some("available_externally")
                )
        })
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn defines(&self, name: &str) -> bool {
        self.functions.iter().any(|f| f.name == name) || self.globals.iter().any(|g| g.name == name)
    }

    /// Names of every symbol the module defines (functions and globals).
    pub fn defined_names(&self) -> Vec<String> {
        self.functions
            .iter()
            .map(|f| f.name.clone())
            .chain(self.globals.iter().filter(|g| !g.is_external).map(|g| g.name.clone()))
            .collect()
    }
}

/// Scans a module for top-level definitions and declarations.
pub fn scan_module(text: &str) -> ModuleSymbols {
    let mut syms = ModuleSymbols::default();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("define ") {
            if let Some(def) = parse_define(rest, idx + 1) {
                syms.functions.push(def);
            }
        } else if let Some(rest) = trimmed.strip_prefix("declare ") {
            if let Some(at) = rest.find('@') {
                if let Some((name, _, _)) = lex_name(rest, at + 1) {
                    syms.declarations.push(FunctionDecl { name, line: idx + 1 });
                }
            }
        } else if line.starts_with('@') {
            if let Some((name, end, _)) = lex_name(line, 1) {
                let rest = line[end..].trim_start();
                if let Some(rhs) = rest.strip_prefix('=') {
                    let words: Vec<&str> = rhs.split_whitespace().collect();
                    let linkage = words
                        .iter()
                        .find(|w| LINKAGES.contains(w))
                        .map(|s| s.to_string());
                    let is_external = matches!(linkage.as_deref(), Some("external") | Some("extern_weak"));
                    syms.globals.push(GlobalVar {
                        name,
                        linkage,
                        is_external,
                        line: idx + 1,
                    });
                }
            }
        }
    }
    syms
}

fn parse_define(rest: &str, line: usize) -> Option<FunctionDef> {
    // the function name is the first `@` outside parentheses (return
    // attributes like `range(i32 0, 2)` never contain one)
    let at = rest.find('@')?;
    let head = &rest[..at];
    let (name, end, _) = lex_name(rest, at + 1)?;
    let linkage = head
        .split_whitespace()
        .find(|w| LINKAGES.contains(w))
        .map(|s| s.to_string());
    let return_type = return_type_of(head.trim_end());
    let after = &rest[end..];
    let params = if after.starts_with('(') {
        split_params(after)
    } else {
        Vec::new()
    };
    Some(FunctionDef {
        name,
        linkage,
        return_type,
        params,
        line,
    })
}

fn return_type_of(head: &str) -> String {
    if head.ends_with('>') || head.ends_with('}') || head.ends_with(']') {
        // vector/struct/array: walk back to the matching opener
        let bytes = head.as_bytes();
        let mut depth = 0i32;
        for i in (0..bytes.len()).rev() {
            match bytes[i] {
                b'>' | b'}' | b']' => depth += 1,
                b'<' | b'{' | b'[' => {
                    depth -= 1;
                    if depth == 0 {
                        return head[i..].to_string();
                    }
                }
                _ => {}
            }
        }
        return head.to_string();
    }
    head.split_whitespace().last().unwrap_or("").to_string()
}

fn split_params(after: &str) -> Vec<String> {
    let bytes = after.as_bytes();
    let mut depth = 0i32;
    let mut start = 1;
    let mut params = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'(' | b'<' | b'{' | b'[' => depth += 1,
            b')' | b'>' | b'}' | b']' => {
                depth -= 1;
                if depth == 0 {
                    let p = after[start..i].trim();
                    if !p.is_empty() {
                        params.push(p.to_string());
                    }
                    break;
                }
            }
            b',' if depth == 1 => {
                params.push(after[start..i].trim().to_string());
                start = i + 1;
            }
            _ => {}
        }
    }
    params
}

/// Scalar IR types the template harness can decode from raw fuzz bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I1,
    I8,
    I16,
    I32,
    I64,
    Float,
    Double,
}

impl ScalarType {
    pub fn parse(ty: &str) -> Option<Self> {
        Some(match ty {
            "i1" => ScalarType::I1,
            "i8" => ScalarType::I8,
            "i16" => ScalarType::I16,
            "i32" => ScalarType::I32,
            "i64" => ScalarType::I64,
            "float" => ScalarType::Float,
            "double" => ScalarType::Double,
            _ => return None,
        })
    }

    /// Bytes consumed from the fuzz input.
    pub fn width(self) -> usize {
        match self {
            ScalarType::I1 | ScalarType::I8 => 1,
            ScalarType::I16 => 2,
            ScalarType::I32 | ScalarType::Float => 4,
            ScalarType::I64 | ScalarType::Double => 8,
        }
    }

    pub fn cxx(self) -> &'static str {
        match self {
            ScalarType::I1 => "bool",
            ScalarType::I8 => "int8_t",
            ScalarType::I16 => "int16_t",
            ScalarType::I32 => "int32_t",
            ScalarType::I64 => "int64_t",
            ScalarType::Float => "float",
            ScalarType::Double => "double",
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, ScalarType::Float | ScalarType::Double)
    }
}

/// The type token of one parameter entry (`i32 noundef %x` -> `i32`).
pub fn param_type(param: &str) -> &str {
    param.split_whitespace().next().unwrap_or("")
}

/// Renames defined symbols according to `map`, leaving everything else alone.
pub fn rename_globals(text: &str, map: &BTreeMap<String, String>) -> String {
    rewrite_refs(text, |kind, name| match kind {
        RefKind::Global => map.get(name).cloned(),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODULE: &str = r#"source_filename = "x.c"
@counter = dso_local global i32 0, align 4
@ext = external global i32
@.str = private unnamed_addr constant [5 x i8] c"@f!0\00", align 1

define dso_local noundef range(i32 0, 2) i32 @_Z3conii(i32 noundef %0, i32 noundef %1) #0 {
  %3 = call i32 @helper(i32 %0), !dbg !12
  ret i32 %3
}

define internal i32 @helper(i32 %x) #1 {
  ret i32 %x ; calls @nothing
}

define <2 x double> @"odd name"(ptr %p, <2 x double> %v) {
  ret <2 x double> %v
}

declare double @log10(double) #2
attributes #0 = { nounwind }
!12 = !{}
"#;

    #[test]
    fn scans_definitions() {
        let s = scan_module(MODULE);
        let names: Vec<_> = s.functions.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["_Z3conii", "helper", "odd name"]);
        assert_eq!(s.functions[0].return_type, "i32");
        assert_eq!(s.functions[0].params.len(), 2);
        assert!(s.functions[0].is_public());
        assert!(!s.functions[1].is_public());
        assert_eq!(s.functions[2].return_type, "<2 x double>");
        assert_eq!(s.functions[2].params, ["ptr %p", "<2 x double> %v"]);
        assert_eq!(s.declarations[0].name, "log10");
        assert_eq!(s.globals.len(), 3);
        assert!(s.globals[1].is_external);
        assert_eq!(s.globals[2].linkage.as_deref(), Some("private"));
    }

    #[test]
    fn rewrite_skips_strings_and_comments() {
        let out = rewrite_refs(MODULE, |kind, name| match (kind, name) {
            (RefKind::Global, "helper") => Some("helper_opt".into()),
            (RefKind::Global, "f") => Some("WRONG".into()),
            (RefKind::Global, "nothing") => Some("WRONG".into()),
            (RefKind::Metadata, "12") => Some("40".into()),
            (RefKind::Metadata, "0") => Some("WRONG".into()),
            (RefKind::AttrGroup, "0") => Some("7".into()),
            (RefKind::Global, "odd name") => Some("odd name_opt".into()),
            _ => None,
        });
        assert!(out.contains("call i32 @helper_opt(i32 %0), !dbg !40"));
        assert!(out.contains("define internal i32 @helper_opt(i32 %x) #1"));
        assert!(out.contains("c\"@f!0\\00\""));
        assert!(out.contains("; calls @nothing"));
        assert!(out.contains("attributes #7 = { nounwind }"));
        assert!(out.contains("!40 = !{}"));
        assert!(out.contains("@\"odd name_opt\"("));
        assert!(!out.contains("WRONG"));
    }

    #[test]
    fn numbered_globals_keep_bare_form() {
        assert_eq!(format_name("0"), "0");
        assert_eq!(format_name("1abc"), "\"1abc\"");
        assert_eq!(format_name("a.b_c$"), "a.b_c$");
    }
}
