//! IR programs and unoptimized/optimized pairs: loading, verification,
//! token capping and `-O3` reference generation.

pub mod symbols;
pub mod tokenize;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::toolchain::{run_command, tool_command, Tool, ToolError, ToolchainConfig};
pub use tokenize::{Tokenizer, TokenizerKind, WhitespacePunct};

/// Token budget for one unoptimized+optimized sample.
pub const DEFAULT_TOKEN_CAP: usize = 5000;

/// Suffix marking the optimized clone of a function in merged modules.
pub const OPT_SUFFIX: &str = "_opt";

const TOOL_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, thiserror::Error)]
pub enum IrError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is empty")]
    EmptyInput(String),
    #[error("IR rejected by verifier:\n{0}")]
    InvalidIr(String),
    #[error(transparent)]
    ToolMissing(#[from] ToolError),
    #[error("tool failed:\n{0}")]
    ToolFailure(String),
    #[error("sample has {actual} tokens, over the cap of {cap}")]
    OverCap { actual: usize, cap: usize },
    #[error("token cap must be positive")]
    InvalidCap,
}

impl IrError {
    /// Short machine-readable kind used in batch records.
    pub fn kind(&self) -> &'static str {
        match self {
            IrError::Io { .. } => "io_error",
            IrError::EmptyInput(_) => "empty_input",
            IrError::InvalidIr(_) => "invalid_ir",
            IrError::ToolMissing(_) => "tool_missing",
            IrError::ToolFailure(_) => "tool_failure",
            IrError::OverCap { .. } => "over_cap",
            IrError::InvalidCap => "invalid_cap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Input,
    O3Reference,
    LlmGenerated,
}

/// One textual LLVM IR module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrProgram {
    pub id: String,
    pub text: String,
    pub token_count: usize,
    pub origin: Origin,
}

impl IrProgram {
    pub fn new(id: impl Into<String>, text: impl Into<String>, origin: Origin) -> Self {
        Self::with_tokenizer(id, text, origin, &WhitespacePunct)
    }

    pub fn with_tokenizer(
        id: impl Into<String>,
        text: impl Into<String>,
        origin: Origin,
        tokenizer: &dyn Tokenizer,
    ) -> Self {
        let text = text.into();
        let token_count = tokenizer.count(&text);
        IrProgram {
            id: id.into(),
            text,
            token_count,
            origin,
        }
    }

    pub fn symbols(&self) -> symbols::ModuleSymbols {
        symbols::scan_module(&self.text)
    }

    /// Writes the text into `dir/<file_name>` and returns the path.
    pub fn write_to(&self, dir: &Path, file_name: &str) -> std::io::Result<std::path::PathBuf> {
        let path = dir.join(file_name);
        std::fs::write(&path, &self.text)?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    CompilerO3,
    LlmPipeline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrPair {
    pub unopt: IrProgram,
    pub opt: IrProgram,
    pub provenance: Provenance,
}

/// A public function of the unoptimized side and its counterpart on the
/// optimized side (same name, or the same name plus `_opt`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionMatch {
    pub base: String,
    pub opt_side_name: String,
}

impl IrPair {
    pub fn new(unopt: IrProgram, opt: IrProgram, provenance: Provenance) -> Self {
        IrPair {
            unopt,
            opt,
            provenance,
        }
    }

    pub fn total_tokens(&self) -> usize {
        self.unopt.token_count + self.opt.token_count
    }

    /// Matches the externally visible functions of both sides. An optimized
    /// side function named `f_opt` counts as a match for `f`.
    pub fn match_public_functions(&self) -> Result<Vec<FunctionMatch>, SymbolMismatch> {
        let base = self.unopt.symbols();
        let opt = self.opt.symbols();
        let base_names: BTreeSet<String> = base.public_functions().map(|f| f.name.clone()).collect();
        let opt_names: BTreeSet<String> = opt.public_functions().map(|f| f.name.clone()).collect();

        let mut matches = Vec::new();
        let mut used = BTreeSet::new();
        let mut missing = Vec::new();
        for name in &base_names {
            let suffixed = format!("{name}{OPT_SUFFIX}");
            let found = if opt_names.contains(name) {
                Some(name.clone())
            } else if opt_names.contains(&suffixed) {
                Some(suffixed)
            } else {
                None
            };
            match found {
                Some(o) => {
                    used.insert(o.clone());
                    matches.push(FunctionMatch {
                        base: name.clone(),
                        opt_side_name: o,
                    });
                }
                None => missing.push(name.clone()),
            }
        }
        let extra: Vec<String> = opt_names.difference(&used).cloned().collect();
        if missing.is_empty() && extra.is_empty() {
            Ok(matches)
        } else {
            Err(SymbolMismatch { missing, extra })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("public function sets differ (missing on optimized side: {missing:?}; only on optimized side: {extra:?})")]
pub struct SymbolMismatch {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
}

/// Reads an IR file. The program id is the file stem. Syntax is not checked.
pub fn load_ir(path: &Path) -> Result<IrProgram, IrError> {
    load_ir_with(path, &WhitespacePunct)
}

pub fn load_ir_with(path: &Path, tokenizer: &dyn Tokenizer) -> Result<IrProgram, IrError> {
    let text = std::fs::read_to_string(path).map_err(|source| IrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if text.is_empty() {
        return Err(IrError::EmptyInput(path.display().to_string()));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "program".to_string());
    Ok(IrProgram::with_tokenizer(id, text, Origin::Input, tokenizer))
}

fn temp_ir(text: &str) -> Result<tempfile::NamedTempFile, IrError> {
    let io = |source| IrError::Io {
        path: "<temp>".into(),
        source,
    };
    let mut f = tempfile::Builder::new().suffix(".ll").tempfile().map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)?;
    f.flush().map_err(io)?;
    Ok(f)
}

/// Runs `opt -passes=verify` on the program.
pub fn validate_ir(program: &IrProgram, toolchain: &ToolchainConfig) -> Result<(), IrError> {
    let opt = toolchain.resolve(Tool::Opt)?;
    if program.text.trim().is_empty() {
        return Err(IrError::InvalidIr("empty module".into()));
    }
    let file = temp_ir(&program.text)?;
    let out = run_command(
        tool_command(&opt)
            .arg("-passes=verify")
            .arg("-disable-output")
            .arg(file.path()),
        Some(TOOL_TIMEOUT),
    )?;
    if out.success() {
        Ok(())
    } else {
        Err(IrError::InvalidIr(out.combined()))
    }
}

/// Succeeds iff the pair's combined token count is within `cap`.
pub fn enforce_token_cap(pair: &IrPair, cap: usize) -> Result<(), IrError> {
    if cap == 0 {
        return Err(IrError::InvalidCap);
    }
    let actual = pair.total_tokens();
    if actual > cap {
        Err(IrError::OverCap { actual, cap })
    } else {
        Ok(())
    }
}

/// Single-program form of the cap check, used before a pair exists.
pub fn enforce_program_cap(program: &IrProgram, cap: usize) -> Result<(), IrError> {
    if cap == 0 {
        return Err(IrError::InvalidCap);
    }
    if program.token_count > cap {
        Err(IrError::OverCap {
            actual: program.token_count,
            cap,
        })
    } else {
        Ok(())
    }
}

/// Produces the `opt -O3 -S` output for `program`.
pub fn compile_o3_reference(program: &IrProgram, toolchain: &ToolchainConfig) -> Result<IrProgram, IrError> {
    let opt = toolchain.resolve(Tool::Opt)?;
    let file = temp_ir(&program.text)?;
    let out = run_command(
        tool_command(&opt).arg("-O3").arg("-S").arg(file.path()).arg("-o").arg("-"),
        Some(TOOL_TIMEOUT),
    )?;
    if !out.success() {
        return Err(IrError::ToolFailure(out.stderr));
    }
    Ok(IrProgram::new(program.id.clone(), out.stdout, Origin::O3Reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prog(text: &str) -> IrProgram {
        IrProgram::new("p", text, Origin::Input)
    }

    #[test]
    fn load_rejects_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.ll");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(load_ir(&p), Err(IrError::EmptyInput(_))));
        assert!(matches!(load_ir(&dir.path().join("nope.ll")), Err(IrError::Io { .. })));
    }

    #[test]
    fn load_passes_text_through() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.ll");
        let text = "define i32 @f() {\n  ret i32 0\n}\n";
        std::fs::write(&p, text).unwrap();
        let prog = load_ir(&p).unwrap();
        assert_eq!(prog.id, "one");
        assert_eq!(prog.text, text);
        assert_eq!(prog.origin, Origin::Input);
        assert_eq!(prog.token_count, WhitespacePunct.count(text));
    }

    #[test]
    fn cap_boundaries() {
        let mut a = prog("x");
        let mut b = prog("y");
        a.token_count = 4304;
        b.token_count = 359;
        let pair = IrPair::new(a.clone(), b.clone(), Provenance::CompilerO3);
        assert!(enforce_token_cap(&pair, DEFAULT_TOKEN_CAP).is_ok());

        a.token_count = 5000;
        b.token_count = 1;
        let pair = IrPair::new(a, b, Provenance::CompilerO3);
        assert!(matches!(
            enforce_token_cap(&pair, 5000),
            Err(IrError::OverCap { actual: 5001, cap: 5000 })
        ));
        assert!(matches!(enforce_token_cap(&pair, 0), Err(IrError::InvalidCap)));
    }

    #[test]
    fn opt_suffix_counts_as_match() {
        let unopt = prog("define i32 @f(i32 %x) {\n ret i32 %x\n}\ndefine internal void @h() {\n ret void\n}\n");
        let opt = prog("define i32 @f_opt(i32 %x) {\n ret i32 %x\n}\n");
        let pair = IrPair::new(unopt.clone(), opt, Provenance::LlmPipeline);
        let m = pair.match_public_functions().unwrap();
        assert_eq!(m, vec![FunctionMatch { base: "f".into(), opt_side_name: "f_opt".into() }]);

        let other = prog("define i32 @g(i32 %x) {\n ret i32 %x\n}\n");
        let err = IrPair::new(unopt, other, Provenance::LlmPipeline)
            .match_public_functions()
            .unwrap_err();
        assert_eq!(err.missing, ["f"]);
        assert_eq!(err.extra, ["g"]);
    }
}
