//! Locating and invoking the external LLVM toolchain (`opt`, `llc`,
//! `clang++`, `alive-tv`).
//!
//! Paths come from a TOML/JSON config section, may be overridden by the
//! `INTOPT_OPT`, `INTOPT_LLC`, `INTOPT_CLANGXX` and `INTOPT_ALIVE_TV`
//! environment variables, and otherwise fall back to a `PATH` lookup followed
//! by the rustup `llvm-tools` component directory.

use std::ffi::OsStr;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("tool `{0}` not found (set {1} or add it to PATH)")]
    Missing(&'static str, &'static str),
    #[error("failed to spawn {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error while running {program}: {source}")]
    Io {
        program: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which toolchain binary a caller needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tool {
    Opt,
    Llc,
    ClangXX,
    AliveTv,
}

impl Tool {
    pub fn binary_name(self) -> &'static str {
        match self {
            Tool::Opt => "opt",
            Tool::Llc => "llc",
            Tool::ClangXX => "clang++",
            Tool::AliveTv => "alive-tv",
        }
    }

    pub fn env_var(self) -> &'static str {
        match self {
            Tool::Opt => "INTOPT_OPT",
            Tool::Llc => "INTOPT_LLC",
            Tool::ClangXX => "INTOPT_CLANGXX",
            Tool::AliveTv => "INTOPT_ALIVE_TV",
        }
    }
}

/// Paths to the external binaries. `None` means "not configured"; use
/// [`ToolchainConfig::resolve`] to get a usable path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolchainConfig {
    pub opt: Option<PathBuf>,
    pub llc: Option<PathBuf>,
    #[serde(rename = "clangxx", alias = "clang++")]
    pub clangxx: Option<PathBuf>,
    #[serde(rename = "alive_tv", alias = "alive-tv")]
    pub alive_tv: Option<PathBuf>,
}

impl ToolchainConfig {
    /// Configuration that only uses environment overrides and discovery.
    pub fn discover() -> Self {
        Self::default().with_env_overrides()
    }

    /// Applies `INTOPT_*` environment overrides on top of `self`.
    pub fn with_env_overrides(mut self) -> Self {
        for tool in [Tool::Opt, Tool::Llc, Tool::ClangXX, Tool::AliveTv] {
            if let Some(v) = std::env::var_os(tool.env_var()) {
                if !v.is_empty() {
                    *self.slot_mut(tool) = Some(PathBuf::from(v));
                }
            }
        }
        self
    }

    fn slot(&self, tool: Tool) -> &Option<PathBuf> {
        match tool {
            Tool::Opt => &self.opt,
            Tool::Llc => &self.llc,
            Tool::ClangXX => &self.clangxx,
            Tool::AliveTv => &self.alive_tv,
        }
    }

    fn slot_mut(&mut self, tool: Tool) -> &mut Option<PathBuf> {
        match tool {
            Tool::Opt => &mut self.opt,
            Tool::Llc => &mut self.llc,
            Tool::ClangXX => &mut self.clangxx,
            Tool::AliveTv => &mut self.alive_tv,
        }
    }

    /// Resolves a tool to an existing executable path.
    ///
    /// An explicitly configured path is never second-guessed: if it does not
    /// exist the tool is reported missing rather than silently replaced by a
    /// discovered one.
    pub fn resolve(&self, tool: Tool) -> Result<PathBuf, ToolError> {
        match self.slot(tool) {
            Some(p) => {
                if p.components().count() == 1 && !p.exists() {
                    // bare command name, look it up on PATH
                    search_path(p.as_os_str())
                        .ok_or(ToolError::Missing(tool.binary_name(), tool.env_var()))
                } else if p.is_file() {
                    Ok(p.clone())
                } else {
                    Err(ToolError::Missing(tool.binary_name(), tool.env_var()))
                }
            }
            None => search_path(OsStr::new(tool.binary_name()))
                .or_else(|| search_llvm_tools(tool.binary_name()))
                .ok_or(ToolError::Missing(tool.binary_name(), tool.env_var())),
        }
    }

    pub fn has(&self, tool: Tool) -> bool {
        self.resolve(tool).is_ok()
    }
}

fn search_path(name: &OsStr) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(name))
        .find(|p| p.is_file())
}

/// The rustup `llvm-tools` component ships `opt` and `llc` under the sysroot.
fn search_llvm_tools(name: &str) -> Option<PathBuf> {
    let out = Command::new("rustc")
        .args(["--print", "sysroot"])
        .stderr(Stdio::null())
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let sysroot = PathBuf::from(String::from_utf8_lossy(&out.stdout).trim());
    let rustlib = sysroot.join("lib").join("rustlib");
    std::fs::read_dir(rustlib)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| e.path().join("bin").join(name))
        .find(|p| p.is_file())
}

/// Captured result of a finished (or killed) subprocess.
#[derive(Debug, Clone)]
pub struct ProcessOutput {
    pub status: Option<ExitStatus>,
    pub stdout: String,
    pub stderr: String,
    pub timed_out: bool,
    pub elapsed: Duration,
}

impl ProcessOutput {
    pub fn success(&self) -> bool {
        !self.timed_out && self.status.map(|s| s.success()).unwrap_or(false)
    }

    pub fn exit_code(&self) -> Option<i32> {
        self.status.and_then(|s| s.code())
    }

    /// stdout followed by stderr, each block only if non-empty.
    pub fn combined(&self) -> String {
        let mut out = self.stdout.clone();
        if !self.stderr.is_empty() {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str(&self.stderr);
        }
        out
    }
}

/// Runs `cmd` to completion, capturing both streams. When `timeout` elapses
/// the child is killed and `timed_out` is set.
pub fn run_command(cmd: &mut Command, timeout: Option<Duration>) -> Result<ProcessOutput, ToolError> {
    let program = cmd.get_program().to_string_lossy().into_owned();
    cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|source| ToolError::Spawn {
        program: program.clone(),
        source,
    })?;

    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout.read_to_end(&mut buf);
        buf
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        buf
    });

    let io_err = |source| ToolError::Io {
        program: program.clone(),
        source,
    };
    let (status, timed_out) = match timeout {
        Some(limit) => match child.wait_timeout(limit).map_err(io_err)? {
            Some(status) => (Some(status), false),
            None => {
                let _ = child.kill();
                let status = child.wait().ok();
                (status, true)
            }
        },
        None => (Some(child.wait().map_err(io_err)?), false),
    };

    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    Ok(ProcessOutput {
        status,
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
        timed_out,
        elapsed: start.elapsed(),
    })
}

/// Convenience wrapper: build a command from a resolved tool path.
pub fn tool_command(path: &Path) -> Command {
    Command::new(path)
}
