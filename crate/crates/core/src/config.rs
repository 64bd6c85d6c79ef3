//! TOML configuration for the CLI and batch runs.
//!
//! Relative paths are resolved against the directory holding the config
//! file. API keys never live here; see [`crate::llm::http::api_key_var`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bench::{ExternalDriver, DEFAULT_TIMED_ITERS, DEFAULT_WARMUP_ITERS};
use crate::ir::tokenize::TokenizerKind;
use crate::llm::{
    HttpBackend, LlmBackend, LlmError, Purpose, RecordingBackend, ReplayBackend, Sampling, StageRouter,
    TranscriptStore, WireFormat,
};
use crate::retrieval::DEFAULT_TOP_M;
use crate::toolchain::ToolchainConfig;
use crate::verify::VerifyConfig;

pub const CONFIG_ENV: &str = "INTOPT_CONFIG";
pub const DEFAULT_TOKEN_CAP: usize = 5000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("backend `{0}` is referenced but not defined")]
    UndefinedBackend(String),
    #[error("no backends defined")]
    NoBackends,
    #[error("missing dependency: {0}")]
    Missing(String),
    #[error("backend `{id}` needs `{field}` in live/record mode")]
    Incomplete { id: String, field: &'static str },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// How model calls are satisfied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Call the endpoints.
    #[default]
    Live,
    /// Call the endpoints and store every exchange.
    Record,
    /// Answer only from stored transcripts.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDef {
    pub id: String,
    pub kind: WireFormat,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub max_retries: Option<u32>,
}

/// Which backend answers which stage; unset stages use `default`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageRouting {
    pub default: Option<String>,
    pub formulation: Option<String>,
    pub refinement: Option<String>,
    pub realization: Option<String>,
    pub baseline: Option<String>,
    pub distillation: Option<String>,
    pub harness: Option<String>,
}

impl StageRouting {
    fn routes(&self) -> [(Purpose, &Option<String>); 6] {
        [
            (Purpose::Formulation, &self.formulation),
            (Purpose::Refinement, &self.refinement),
            (Purpose::Realization, &self.realization),
            (Purpose::Baseline, &self.baseline),
            (Purpose::Distillation, &self.distillation),
            (Purpose::HarnessGeneration, &self.harness),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub enabled: bool,
    pub iters: u64,
    pub warmup: u64,
    pub driver: Option<ExternalDriver>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            enabled: true,
            iters: DEFAULT_TIMED_ITERS,
            warmup: DEFAULT_WARMUP_ITERS,
            driver: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub toolchain: ToolchainConfig,
    pub kb: Option<PathBuf>,
    pub analysis_map: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub transcripts: PathBuf,
    pub work_dir: PathBuf,
    pub mode: Mode,
    pub backends: Vec<BackendDef>,
    pub stages: StageRouting,
    pub retrieval_m: usize,
    pub token_cap: usize,
    pub tokenizer: TokenizerKind,
    pub workers: usize,
    /// Run verification (and therefore benchmarking) in batch mode.
    pub verify_enabled: bool,
    pub verify: VerifyConfig,
    pub bench: BenchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            toolchain: ToolchainConfig::default(),
            kb: None,
            analysis_map: None,
            prompts_dir: None,
            transcripts: PathBuf::from("transcripts"),
            work_dir: PathBuf::from("work"),
            mode: Mode::Live,
            backends: Vec::new(),
            stages: StageRouting::default(),
            retrieval_m: DEFAULT_TOP_M,
            token_cap: DEFAULT_TOKEN_CAP,
            tokenizer: TokenizerKind::default(),
            workers: 1,
            verify_enabled: true,
            verify: VerifyConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && p.components().count() > 0 {
        *p = base.join(&*p);
    }
}

fn rebase_tool(base: &Path, p: &mut Option<PathBuf>) {
    // bare names ("opt") are PATH lookups, not relative paths
    if let Some(path) = p {
        if path.components().count() > 1 {
            rebase(base, path);
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })
    }

    /// Loads a file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.kb, &mut cfg.analysis_map, &mut cfg.prompts_dir].into_iter().flatten() {
            rebase(base, p);
        }
        rebase(base, &mut cfg.transcripts);
        rebase(base, &mut cfg.work_dir);
        for t in [
            &mut cfg.toolchain.opt,
            &mut cfg.toolchain.llc,
            &mut cfg.toolchain.clangxx,
            &mut cfg.toolchain.alive_tv,
        ] {
            rebase_tool(base, t);
        }
        Ok(cfg)
    }

    /// `--config`, else `$INTOPT_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
        let cfg = match path {
            Some(p) => Self::load(&p)?,
            None => Self::default(),
        };
        Ok(cfg.with_env_overrides())
    }

    pub fn with_env_overrides(mut self) -> Self {
        self.toolchain = self.toolchain.with_env_overrides();
        self
    }

    pub fn backend(&self, id: &str) -> Option<&BackendDef> {
        self.backends.iter().find(|b| b.id == id)
    }

    fn default_backend_id(&self) -> Result<String, ConfigError> {
        match &self.stages.default {
            Some(id) => Ok(id.clone()),
            None => self.backends.first().map(|b| b.id.clone()).ok_or(ConfigError::NoBackends),
        }
    }

    /// Every referenced backend id must be defined.
    pub fn check_backends(&self) -> Result<(), ConfigError> {
        let default = self.default_backend_id()?;
        let referenced = std::iter::once(&default).chain(self.stages.routes().into_iter().filter_map(|(_, id)| id.as_ref()));
        for id in referenced {
            if self.backend(id).is_none() {
                return Err(ConfigError::UndefinedBackend(id.clone()));
            }
        }
        Ok(())
    }

    /// Checks every path the batch needs before any work starts.
    pub fn check_paths(&self, needs_opt: bool, needs_kb: bool) -> Result<(), ConfigError> {
        if needs_opt {
            self.toolchain
                .resolve(crate::toolchain::Tool::Opt)
                .map_err(|e| ConfigError::Missing(e.to_string()))?;
        }
        let named = [("kb", &self.kb), ("analysis_map", &self.analysis_map), ("prompts_dir", &self.prompts_dir)];
        for (name, p) in named {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ConfigError::Missing(format!("{name} {}", p.display())));
                }
            }
        }
        if needs_kb && self.kb.is_none() {
            return Err(ConfigError::Missing("kb (no knowledge base configured)".into()));
        }
        if self.mode == Mode::Replay && !self.transcripts.is_dir() {
            return Err(ConfigError::Missing(format!("transcripts {}", self.transcripts.display())));
        }
        Ok(())
    }

    fn make_backend(
        &self,
        def: &BackendDef,
        store: Option<&Arc<TranscriptStore>>,
    ) -> Result<Box<dyn LlmBackend>, ConfigError> {
        let http = || -> Result<HttpBackend, ConfigError> {
            let endpoint = def.endpoint.as_deref().ok_or_else(|| ConfigError::Incomplete {
                id: def.id.clone(),
                field: "endpoint",
            })?;
            let mut b = HttpBackend::new(&def.id, endpoint, def.model.as_deref().unwrap_or(&def.id), def.kind);
            b.sampling = def.sampling;
            if let Some(r) = def.max_retries {
                b.max_retries = r;
            }
            Ok(b)
        };
        Ok(match (self.mode, store) {
            (Mode::Live, _) => Box::new(http()?),
            (Mode::Record, Some(s)) => Box::new(RecordingBackend::new(http()?, Arc::clone(s))),
            (Mode::Replay, Some(s)) => Box::new(ReplayBackend::new(&def.id, def.sampling, Arc::clone(s))),
            (_, None) => unreachable!("store opened for record/replay"),
        })
    }

    /// The stage router for the configured mode. Record and replay share
    /// one transcript store.
    pub fn build_backend(&self) -> Result<StageRouter, ConfigError> {
        self.check_backends()?;
        let store = match self.mode {
            Mode::Live => None,
            Mode::Record => {
                std::fs::create_dir_all(&self.transcripts).map_err(|source| ConfigError::Io {
                    path: self.transcripts.display().to_string(),
                    source,
                })?;
                Some(Arc::new(TranscriptStore::open(&self.transcripts)?))
            }
            Mode::Replay => Some(Arc::new(TranscriptStore::open(&self.transcripts)?)),
        };
        if let Some(s) = &store {
            for w in s.warnings() {
                log::warn!("{w}");
            }
        }
        let default_id = self.default_backend_id()?;
        let def = self.backend(&default_id).expect("checked");
        let mut router = StageRouter::new(self.make_backend(def, store.as_ref())?);
        for (purpose, id) in self.stages.routes() {
            if let Some(id) = id {
                let def = self.backend(id).expect("checked");
                router = router.route(purpose, self.make_backend(def, store.as_ref())?);
            }
        }
        Ok(router)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
kb = "kb.json"
transcripts = "fixtures/transcripts"
mode = "replay"
retrieval_m = 3

[toolchain]
opt = "opt"
llc = "bin/llc"

[[backends]]
id = "gpt-5"
kind = "openai_chat"
endpoint = "https://example.invalid/v1/chat/completions"

[[backends]]
id = "ftd-13b"
kind = "completion"
endpoint = "http://localhost:8000/v1/completions"
sampling = { temperature = 0.0, max_output_tokens = 2048 }

[stages]
default = "gpt-5"
formulation = "ftd-13b"

[verify]
runs = 10000
harness_mode = "template"

[bench]
iters = 1000000
"#;

    #[test]
    fn parses_and_rebases() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("intopt.toml");
        std::fs::write(&path, SAMPLE).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.kb.as_deref(), Some(dir.path().join("kb.json").as_path()));
        assert_eq!(cfg.toolchain.opt.as_deref(), Some(Path::new("opt")));
        assert_eq!(cfg.toolchain.llc.as_deref(), Some(dir.path().join("bin/llc").as_path()));
        assert_eq!(cfg.verify.runs, 10000);
        assert_eq!(cfg.verify.alive_timeout_s, 60);
        assert_eq!(cfg.bench.iters, 1_000_000);
        assert_eq!(cfg.bench.warmup, 1000);
        assert_eq!(cfg.token_cap, 5000);
        assert_eq!(cfg.backend("ftd-13b").unwrap().sampling.max_output_tokens, 2048);
        cfg.check_backends().unwrap();
    }

    #[test]
    fn undefined_backend_rejected() {
        let mut cfg = PipelineConfig::from_toml(SAMPLE, "inline").unwrap();
        cfg.stages.refinement = Some("claude".into());
        assert!(matches!(cfg.check_backends(), Err(ConfigError::UndefinedBackend(id)) if id == "claude"));
        let empty = PipelineConfig::default();
        assert!(matches!(empty.check_backends(), Err(ConfigError::NoBackends)));
    }

    #[test]
    fn replay_router_uses_stage_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::from_toml(SAMPLE, "inline").unwrap();
        cfg.transcripts = dir.path().to_path_buf();
        let router = cfg.build_backend().unwrap();
        assert_eq!(router.backend_for(Purpose::Formulation).id(), "ftd-13b");
        assert_eq!(router.backend_for(Purpose::Realization).id(), "gpt-5");
        assert!(matches!(
            router.ask("x".into(), Purpose::Refinement),
            Err(LlmError::ReplayMiss(_))
        ));
    }

    #[test]
    fn missing_opt_is_reported() {
        let mut cfg = PipelineConfig::default();
        cfg.toolchain.opt = Some("/nonexistent/opt".into());
        let err = cfg.check_paths(true, false).unwrap_err();
        assert!(err.to_string().contains("opt"), "{err}");
    }

    #[test]
    fn bad_toml_is_parse_error() {
        assert!(matches!(
            PipelineConfig::from_toml("retrieval_m = \"three\"", "x"),
            Err(ConfigError::Parse { .. })
        ));
    }
}
