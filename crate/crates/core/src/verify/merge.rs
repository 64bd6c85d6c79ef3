//! Merging an unoptimized/optimized pair into one module for differential
//! testing. The unoptimized module is kept verbatim; every symbol the
//! optimized side defines is renamed with the `_opt` suffix.

use std::collections::{BTreeMap, BTreeSet};

use crate::ir::symbols::{rewrite_refs, scan_module, RefKind};
use crate::ir::{IrPair, IrProgram, Origin, OPT_SUFFIX};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("symbol clash: {0}")]
pub struct SymbolClash(pub String);

/// The merged module and its (base, opt) function pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedModule {
    pub program: IrProgram,
    pub pairs: Vec<(String, String)>,
}

const LOCAL_INCOMPATIBLE: &[&str] = &["hidden", "protected", "dllexport", "dllimport"];
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

fn max_numbered(text: &str, kind: RefKind) -> Option<u64> {
    let mut max = None;
    rewrite_refs(text, |k, name| {
        if k == kind {
            if let Ok(n) = name.parse::<u64>() {
                max = Some(max.map_or(n, |m: u64| m.max(n)));
            }
        }
        None
    });
    max
}

/// Gives a `define` line or `@g = ...` line internal linkage.
fn make_internal(line: &str) -> String {
    let (prefix, rest) = if let Some(r) = line.strip_prefix("define ") {
        ("define ", r)
    } else if let Some(eq) = line.find('=') {
        line.split_at(eq + 1)
    } else {
        return line.to_string();
    };
    let mut words: Vec<&str> = rest.split(' ').filter(|w| !w.is_empty()).collect();
    words.retain(|w| !LOCAL_INCOMPATIBLE.contains(w));
    match words.iter().position(|w| LINKAGES.contains(w)) {
        Some(i) if words[i] == "private" || words[i] == "internal" => {}
        Some(i) => words[i] = "internal",
        None => words.insert(0, "internal"),
    }
    format!("{} {}", prefix.trim_end(), words.join(" "))
}

fn strip_comdat(line: &str) -> String {
    let re = regex::Regex::new(r",?\s*\bcomdat\b(\(\$[^)]*\))?").expect("valid regex");
    re.replace_all(line, "").to_string()
}

fn is_named_metadata(line: &str) -> bool {
    line.starts_with('!') && line.as_bytes().get(1).is_some_and(|b| b.is_ascii_alphabetic() || *b == b'.' || *b == b'_')
}

fn is_module_header(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with("source_filename")
        || t.starts_with("target datalayout")
        || t.starts_with("target triple")
        || (t.starts_with('$') && t.contains("= comdat"))
        || t.starts_with("; ModuleID")
}

pub fn merge_for_diff(pair: &IrPair) -> Result<MergedModule, SymbolClash> {
    let matches = pair
        .match_public_functions()
        .map_err(|e| SymbolClash(e.to_string()))?;
    if matches.is_empty() {
        return Err(SymbolClash("no public functions to pair".into()));
    }
    let base = scan_module(&pair.unopt.text);
    let opt = scan_module(&pair.opt.text);

    let mut taken: BTreeSet<String> = base.defined_names().into_iter().collect();
    taken.extend(base.declarations.iter().map(|d| d.name.clone()));
    taken.extend(base.globals.iter().map(|g| g.name.clone()));

    let paired: BTreeMap<&str, &str> = matches
        .iter()
        .map(|m| (m.opt_side_name.as_str(), m.base.as_str()))
        .collect();

    let mut renames: BTreeMap<String, String> = BTreeMap::new();
    let mut anon = 0usize;
    for name in opt.defined_names() {
        let target = if let Some(base_name) = paired.get(name.as_str()) {
            format!("{base_name}{OPT_SUFFIX}")
        } else if name.bytes().all(|b| b.is_ascii_digit()) {
            anon += 1;
            format!("__anon{name}{OPT_SUFFIX}")
        } else {
            format!("{name}{OPT_SUFFIX}")
        };
        if taken.contains(&target) || renames.values().any(|t| *t == target) {
            return Err(SymbolClash(format!("renaming @{name} to @{target} collides")));
        }
        renames.insert(name, target);
    }
    if anon > 0 {
        log::info!("named {anon} numbered globals on the optimized side");
    }

    let attr_offset = max_numbered(&pair.unopt.text, RefKind::AttrGroup).map_or(0, |m| m + 1);
    let md_offset = max_numbered(&pair.unopt.text, RefKind::Metadata).map_or(0, |m| m + 1);

    let internalize: BTreeSet<usize> = opt
        .functions
        .iter()
        .filter(|f| f.is_public() && !paired.contains_key(f.name.as_str()))
        .map(|f| f.line)
        .chain(
            opt.globals
                .iter()
                .filter(|g| !g.is_external && !matches!(g.linkage.as_deref(), Some("private") | Some("internal")))
                .map(|g| g.line),
        )
        .collect();
    let definition_lines: BTreeSet<usize> = opt
        .functions
        .iter()
        .map(|f| f.line)
        .chain(opt.globals.iter().map(|g| g.line))
        .collect();
    let drop_decls: BTreeSet<usize> = opt
        .declarations
        .iter()
        .filter(|d| taken.contains(&d.name) || renames.contains_key(&d.name))
        .map(|d| d.line)
        .chain(
            opt.globals
                .iter()
                .filter(|g| g.is_external && taken.contains(&g.name))
                .map(|g| g.line),
        )
        .collect();

    let mut kept = Vec::new();
    for (idx, line) in pair.opt.text.lines().enumerate() {
        let no = idx + 1;
        if drop_decls.contains(&no) || is_module_header(line) || is_named_metadata(line) {
            continue;
        }
        let mut l = line.to_string();
        if definition_lines.contains(&no) {
            l = strip_comdat(&l);
        }
        if internalize.contains(&no) {
            l = make_internal(&l);
        }
        kept.push(l);
    }
    let opt_body = kept.join("\n");
    let opt_body = rewrite_refs(&opt_body, |kind, name| match kind {
        RefKind::Global => renames.get(name).cloned(),
        RefKind::AttrGroup => name.parse::<u64>().ok().map(|n| (n + attr_offset).to_string()),
        RefKind::Metadata => name.parse::<u64>().ok().map(|n| (n + md_offset).to_string()),
    });

    let mut text = pair.unopt.text.trim_end().to_string();
    text.push_str("\n\n; ---- optimized side ----\n");
    text.push_str(opt_body.trim_matches('\n'));
    text.push('\n');

    let pairs = matches
        .iter()
        .map(|m| (m.base.clone(), format!("{}{OPT_SUFFIX}", m.base)))
        .collect();
    Ok(MergedModule {
        program: IrProgram::new(format!("{}-merged", pair.unopt.id), text, Origin::Input),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::Provenance;

    fn pair(a: &str, b: &str) -> IrPair {
        IrPair::new(
            IrProgram::new("a", a, Origin::Input),
            IrProgram::new("b", b, Origin::LlmGenerated),
            Provenance::LlmPipeline,
        )
    }

    const BASE: &str = r#"source_filename = "a.c"
target triple = "x86_64-unknown-linux-gnu"
@k = internal global i32 3
define dso_local i32 @f(i32 %x) #0 {
  %v = load i32, ptr @k, !tbaa !1
  %r = add i32 %x, %v
  ret i32 %r
}
declare i32 @llvm.abs.i32(i32, i1)
attributes #0 = { nounwind }
!llvm.ident = !{!0}
!0 = !{!"clang"}
!1 = !{!"int"}
"#;

    const OPT: &str = r#"source_filename = "a.c"
target triple = "x86_64-unknown-linux-gnu"
@k = internal global i32 3
@0 = private constant i32 1
define dso_local i32 @f(i32 %x) #0 {
  %v = load i32, ptr @k, !tbaa !1
  %c = load i32, ptr @0
  %r = call i32 @helper(i32 %x, i32 %v)
  ret i32 %r
}
define linkonce_odr hidden i32 @helper(i32 %a, i32 %b) #1 {
  %r = add i32 %a, %b
  ret i32 %r
}
declare i32 @llvm.abs.i32(i32, i1)
attributes #0 = { nounwind }
attributes #1 = { nounwind readnone }
!llvm.ident = !{!0}
!0 = !{!"clang"}
!1 = !{!"int"}
"#;

    #[test]
    fn renames_and_renumbers_opt_side() {
        let m = merge_for_diff(&pair(BASE, OPT)).unwrap();
        let t = &m.program.text;
        assert_eq!(m.pairs, [("f".to_string(), "f_opt".to_string())]);
        assert!(t.starts_with(BASE.trim_end()));
        let opt_side = t.split("; ---- optimized side ----").nth(1).unwrap();
        assert!(opt_side.contains("define dso_local i32 @f_opt(i32 %x) #1 {"));
        assert!(opt_side.contains("@k_opt = internal global i32 3"));
        assert!(opt_side.contains("ptr @k_opt, !tbaa !3"));
        assert!(opt_side.contains("@__anon0_opt = private constant i32 1"));
        assert!(opt_side.contains("ptr @__anon0_opt"));
        assert!(opt_side.contains("define internal i32 @helper_opt(i32 %a, i32 %b) #2 {"));
        assert!(opt_side.contains("attributes #2 = { nounwind readnone }"));
        assert!(opt_side.contains("!2 = !{!\"clang\"}"));
        assert!(!opt_side.contains("declare"));
        assert!(!opt_side.contains("source_filename"));
        assert!(!opt_side.contains("!llvm.ident"));
    }

    #[test]
    fn already_suffixed_opt_name_kept() {
        let a = "define i32 @g(i32 %x) {\n  ret i32 %x\n}\n";
        let b = "define i32 @g_opt(i32 %x) {\n  ret i32 %x\n}\n";
        let m = merge_for_diff(&pair(a, b)).unwrap();
        assert_eq!(m.program.text.matches("@g_opt(").count(), 1);
    }

    #[test]
    fn mismatched_public_sets() {
        let a = "define i32 @g(i32 %x) {\n  ret i32 %x\n}\n";
        let b = "define i32 @h(i32 %x) {\n  ret i32 %x\n}\n";
        assert!(merge_for_diff(&pair(a, b)).is_err());
    }

    #[test]
    fn rename_collision() {
        let a = "define i32 @g(i32 %x) {\n  ret i32 %x\n}\n@t_opt = global i32 0\n";
        let b = "define i32 @g(i32 %x) {\n  ret i32 %x\n}\n@t = internal global i32 0\n";
        let err = merge_for_diff(&pair(a, b)).unwrap_err();
        assert!(err.0.contains("@t_opt"));
    }

    #[test]
    fn internalize_line_edits() {
        assert_eq!(make_internal("define linkonce_odr hidden i32 @x() {"), "define internal i32 @x() {");
        assert_eq!(make_internal("@g = dso_local global i32 0"), "@g = internal dso_local global i32 0");
        assert_eq!(strip_comdat("define linkonce_odr i32 @x() comdat {"), "define linkonce_odr i32 @x() {");
    }
}
