//! libFuzzer harnesses for (base, opt) function pairs: a built-in template
//! for scalar signatures, or one requested from a model.

use serde::{Deserialize, Serialize};

use super::merge::MergedModule;
use crate::ir::symbols::{param_type, scan_module, FunctionDef, ScalarType};
use crate::ir::OPT_SUFFIX;
use crate::llm::{LlmBackend, LlmError, Purpose};
use crate::pipeline::parse::{extract_harness_source, ParseError};
use crate::pipeline::prompts::{PromptError, StagePromptSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarnessProvenance {
    LlmGenerated,
    Template,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzHarness {
    pub source: String,
    pub function_pairs: Vec<(String, String)>,
    pub provenance: HarnessProvenance,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unsupported signature for @{function}: {reason}")]
    UnsupportedSignature { function: String, reason: String },
    #[error("merged module has no function pairs")]
    NoPairs,
    #[error(transparent)]
    NoCode(#[from] ParseError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("harness must define exactly one fuzzer entry point, found {0}")]
    EntryPoints(usize),
}

struct Signature {
    ret: ScalarType,
    params: Vec<ScalarType>,
}

fn signature(f: &FunctionDef) -> Result<Signature, HarnessError> {
    let unsupported = |reason: String| HarnessError::UnsupportedSignature {
        function: f.name.clone(),
        reason,
    };
    if f.return_type == "void" {
        return Err(unsupported("void return leaves nothing to compare".into()));
    }
    let ret = ScalarType::parse(&f.return_type).ok_or_else(|| unsupported(format!("return type {}", f.return_type)))?;
    let mut params = Vec::new();
    for p in &f.params {
        let ty = param_type(p);
        if ty == "..." {
            return Err(unsupported("variadic".into()));
        }
        params.push(ScalarType::parse(ty).ok_or_else(|| unsupported(format!("parameter type {ty}")))?);
    }
    Ok(Signature { ret, params })
}

fn is_c_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// C++ prototype binding `alias` to the IR symbol `symbol`.
fn prototype(alias: &str, symbol: &str, sig: &Signature) -> String {
    let params = sig.params.iter().map(|p| p.cxx()).collect::<Vec<_>>().join(", ");
    if is_c_identifier(symbol) && !symbol.starts_with("_Z") {
        format!("extern \"C\" {} {symbol}({params});", sig.ret.cxx())
    } else {
        format!("{} {alias}({params}) asm(\"{symbol}\");", sig.ret.cxx())
    }
}

fn callee(alias: &str, symbol: &str) -> String {
    if is_c_identifier(symbol) && !symbol.starts_with("_Z") {
        symbol.to_string()
    } else {
        alias.to_string()
    }
}

fn compare(ty: ScalarType) -> &'static str {
    match ty {
        ScalarType::Float => "same_f32(r_base, r_opt)",
        ScalarType::Double => "same_f64(r_base, r_opt)",
        _ => "r_base == r_opt",
    }
}

/// Harness decoding each pair's scalar arguments from the front of the
/// input, calling both versions, and trapping on any difference.
pub fn template_harness(merged: &MergedModule) -> Result<FuzzHarness, HarnessError> {
    if merged.pairs.is_empty() {
        return Err(HarnessError::NoPairs);
    }
    let syms = scan_module(&merged.program.text);
    let mut protos = Vec::new();
    let mut bodies = Vec::new();
    let mut uses_float = false;
    for (i, (base, opt)) in merged.pairs.iter().enumerate() {
        let f = syms.function(base).ok_or(HarnessError::NoPairs)?;
        let sig = signature(f)?;
        uses_float |= sig.ret.is_float();
        let (alias_b, alias_o) = (format!("fz_base_{i}"), format!("fz_base_{i}{OPT_SUFFIX}"));
        protos.push(prototype(&alias_b, base, &sig));
        protos.push(prototype(&alias_o, opt, &sig));

        let width: usize = sig.params.iter().map(|p| p.width()).sum();
        let mut body = format!("    if (size >= {width}) {{\n");
        let mut offset = 0;
        let mut args = Vec::new();
        for (k, p) in sig.params.iter().enumerate() {
            let w = p.width();
            match p {
                ScalarType::I1 => body.push_str(&format!("        bool a{k} = (data[{offset}] & 1) != 0;\n")),
                _ => {
                    body.push_str(&format!("        {} a{k};\n", p.cxx()));
                    body.push_str(&format!("        std::memcpy(&a{k}, data + {offset}, {w});\n"));
                }
            }
            args.push(format!("a{k}"));
            offset += w;
        }
        let args = args.join(", ");
        body.push_str(&format!(
            "        {ret} r_base = {b}({args});\n        {ret} r_opt  = {o}({args});\n",
            ret = sig.ret.cxx(),
            b = callee(&alias_b, base),
            o = callee(&alias_o, opt),
        ));
        body.push_str(&format!(
            "        if (!({})) {{\n            __builtin_trap();\n        }}\n    }}\n",
            compare(sig.ret)
        ));
        bodies.push(body);
    }

    let mut src = String::from("#include <cstdint>\n#include <cstddef>\n#include <cstring>\n");
    if uses_float {
        src.push_str("#include <cmath>\n");
    }
    src.push('\n');
    for p in &protos {
        src.push_str(p);
        src.push('\n');
    }
    if uses_float {
        // NaNs compare equal to each other regardless of payload; everything
        // else must match bit for bit (so +0.0 and -0.0 differ)
        src.push_str(
            "\nstatic bool same_f32(float a, float b) {\n    if (std::isnan(a) && std::isnan(b)) return true;\n    uint32_t x, y;\n    std::memcpy(&x, &a, 4);\n    std::memcpy(&y, &b, 4);\n    return x == y;\n}\n\
             \nstatic bool same_f64(double a, double b) {\n    if (std::isnan(a) && std::isnan(b)) return true;\n    uint64_t x, y;\n    std::memcpy(&x, &a, 8);\n    std::memcpy(&y, &b, 8);\n    return x == y;\n}\n",
        );
    }
    src.push_str("\nextern \"C\" int LLVMFuzzerTestOneInput(const uint8_t* data, size_t size) {\n");
    for b in &bodies {
        src.push_str(b);
    }
    src.push_str("    return 0;\n}\n");
    Ok(FuzzHarness {
        source: src,
        function_pairs: merged.pairs.clone(),
        provenance: HarnessProvenance::Template,
    })
}

/// Harness written by a model from the merged IR.
pub fn llm_harness(
    merged: &MergedModule,
    backend: &dyn LlmBackend,
    prompts: &StagePromptSet,
) -> Result<FuzzHarness, HarnessError> {
    if merged.pairs.is_empty() {
        return Err(HarnessError::NoPairs);
    }
    let prompt = prompts.harness(&merged.program.text)?;
    let response = backend.ask(prompt, Purpose::HarnessGeneration)?;
    let source = extract_harness_source(&response)?;
    let entries = source.matches("LLVMFuzzerTestOneInput").count();
    if entries != 1 {
        return Err(HarnessError::EntryPoints(entries));
    }
    Ok(FuzzHarness {
        source,
        function_pairs: merged.pairs.clone(),
        provenance: HarnessProvenance::LlmGenerated,
    })
}
