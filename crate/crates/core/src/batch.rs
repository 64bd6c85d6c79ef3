//! Batch runs over a manifest of IR files: optimize, verify, benchmark, and
//! append one JSON line per program. Per-program failures become records;
//! only configuration problems abort the run.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisNameMap, ItemStatus};
use crate::bench::{build_bench, run_bench_record, BenchDriver, PerfRecord};
use crate::config::{ConfigError, PipelineConfig};
use crate::ir::{enforce_program_cap, load_ir_with, validate_ir, IrError, IrPair, IrProgram, Provenance};
use crate::kb::KnowledgeBase;
use crate::llm::{sha256_hex, LlmBackend};
use crate::pipeline::{GeneratedIr, IrValidity, Pipeline, StagePromptSet};
use crate::retrieval::{build_index, ActionRetrieval, TfIdfIndex};
use crate::strategy::OptimizationStrategy;
use crate::verify::{self, HarnessBackend, HarnessMode, Method, VerdictStatus, VerificationVerdict};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Formulate, refine with analyses, realize.
    #[default]
    Pipeline,
    /// One end-to-end prompt.
    Baseline,
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("manifest {path}: {source}")]
    Manifest {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate program id `{0}` in manifest")]
    DuplicateProgram(String),
    #[error("knowledge base: {0}")]
    Kb(String),
    #[error("results file {path}: {source}")]
    Results {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Status of one analysis in a record (payloads are not repeated here).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisStatus {
    pub analysis_id: String,
    pub print_pass: Option<String>,
    pub status: ItemStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub kind: String,
    pub message: String,
}

/// One line of results.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub program_id: String,
    pub input: String,
    pub optimizer: Optimizer,
    pub input_sha256: Option<String>,
    pub input_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RecordError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<OptimizationStrategy>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieval: Vec<ActionRetrieval>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub analyses: Vec<AnalysisStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined: Option<OptimizationStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimized_ir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimized_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validity: Option<IrValidity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerificationVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perf: Option<PerfRecord>,
}

impl ResultRecord {
    fn new(program_id: &str, input: &str, optimizer: Optimizer) -> Self {
        ResultRecord {
            program_id: program_id.to_string(),
            input: input.to_string(),
            optimizer,
            input_sha256: None,
            input_tokens: None,
            error: None,
            initial: None,
            retrieval: Vec::new(),
            analyses: Vec::new(),
            refined: None,
            optimized_ir: None,
            optimized_sha256: None,
            validity: None,
            verdict: None,
            perf: None,
        }
    }

    fn fail(&mut self, kind: &str, message: impl Into<String>) {
        self.error = Some(RecordError {
            kind: kind.to_string(),
            message: message.into(),
        });
    }

    /// Short status: `ok` or the error kind.
    pub fn status(&self) -> &str {
        self.error.as_ref().map_or("ok", |e| e.kind.as_str())
    }
}

/// One manifest entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub program_id: String,
    /// Path as written in the manifest (recorded verbatim).
    pub input: String,
    pub path: PathBuf,
}

/// Reads a manifest: one IR path per line, relative to the manifest's
/// directory; blank lines and `#` comments are ignored.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, BatchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BatchError::Manifest {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest_from_lines(text.lines().map(str::to_string), base)
}

pub fn manifest_from_lines(
    lines: impl IntoIterator<Item = String>,
    base: &Path,
) -> Result<Vec<ManifestEntry>, BatchError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for line in lines {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let p = Path::new(l);
        let path = if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        let program_id = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| l.to_string());
        if !seen.insert(program_id.clone()) {
            return Err(BatchError::DuplicateProgram(program_id));
        }
        out.push(ManifestEntry {
            program_id,
            input: l.to_string(),
            path,
        });
    }
    Ok(out)
}

/// Everything shared by the per-program workers.
pub struct BatchContext<'a> {
    pub config: &'a PipelineConfig,
    pub backend: &'a dyn LlmBackend,
    pub prompts: StagePromptSet,
    pub kb: Option<KnowledgeBase>,
    pub index: Option<TfIdfIndex>,
    pub name_map: AnalysisNameMap,
    pub bench_driver: Option<&'a (dyn BenchDriver + Sync)>,
    pub optimizer: Optimizer,
}

impl<'a> BatchContext<'a> {
    /// Loads KB, index, name map and prompts named by the config, after
    /// checking that every required dependency exists.
    pub fn prepare(
        config: &'a PipelineConfig,
        backend: &'a dyn LlmBackend,
        optimizer: Optimizer,
    ) -> Result<Self, BatchError> {
        let needs_kb = optimizer == Optimizer::Pipeline;
        config.check_paths(true, needs_kb)?;
        let (kb, index) = if needs_kb {
            let path = config.kb.as_ref().expect("checked");
            let kb = KnowledgeBase::load(path).map_err(|e| BatchError::Kb(e.to_string()))?;
            let index = build_index(&kb).map_err(|e| BatchError::Kb(e.to_string()))?;
            (Some(kb), Some(index))
        } else {
            (None, None)
        };
        let name_map = match &config.analysis_map {
            Some(p) => AnalysisNameMap::load(p).map_err(|e| ConfigError::Missing(e.to_string()))?,
            None => AnalysisNameMap::builtin(),
        };
        let prompts = match &config.prompts_dir {
            Some(d) => StagePromptSet::from_dir(d).map_err(|e| ConfigError::Missing(e.to_string()))?,
            None => StagePromptSet::default(),
        };
        Ok(BatchContext {
            config,
            backend,
            prompts,
            kb,
            index,
            name_map,
            bench_driver: None,
            optimizer,
        })
    }

    /// Runs one program end to end. Never panics on bad input; every
    /// failure lands in the record.
    pub fn run_one(&self, entry: &ManifestEntry) -> ResultRecord {
        let cfg = self.config;
        let mut rec = ResultRecord::new(&entry.program_id, &entry.input, self.optimizer);
        let tokenizer = cfg.tokenizer.build();
        let program = match load_ir_with(&entry.path, tokenizer.as_ref()) {
            Ok(mut p) => {
                p.id = entry.program_id.clone();
                p
            }
            Err(e) => {
                rec.fail(ir_kind(&e), e.to_string());
                return rec;
            }
        };
        rec.input_sha256 = Some(sha256_hex(program.text.as_bytes()));
        rec.input_tokens = Some(program.token_count);
        if let Err(e) = validate_ir(&program, &cfg.toolchain) {
            rec.fail(ir_kind(&e), e.to_string());
            return rec;
        }
        if let Err(e) = enforce_program_cap(&program, cfg.token_cap) {
            rec.fail(ir_kind(&e), e.to_string());
            return rec;
        }

        let pipeline = Pipeline::new(self.backend, &self.prompts, &cfg.toolchain);
        let generated = match self.optimizer {
            Optimizer::Baseline => pipeline.baseline(&program),
            Optimizer::Pipeline => {
                let (kb, index) = (self.kb.as_ref().expect("prepared"), self.index.as_ref().expect("prepared"));
                pipeline
                    .run(&program, kb, index, &self.name_map, cfg.retrieval_m)
                    .map(|out| {
                        rec.initial = Some(out.initial);
                        rec.retrieval = out.retrieval;
                        rec.analyses = out
                            .bundle
                            .items
                            .iter()
                            .map(|i| AnalysisStatus {
                                analysis_id: i.analysis_id.clone(),
                                print_pass: i.print_pass.clone(),
                                status: i.status,
                            })
                            .collect();
                        rec.refined = Some(out.refined);
                        out.optimized
                    })
            }
        };
        let GeneratedIr { program: optimized, validity } = match generated {
            Ok(g) => g,
            Err(e) => {
                rec.fail(e.kind(), e.to_string());
                return rec;
            }
        };
        rec.optimized_sha256 = Some(sha256_hex(optimized.text.as_bytes()));
        rec.optimized_ir = Some(optimized.text.clone());
        rec.validity = Some(validity.clone());

        if !cfg.verify_enabled {
            rec.verdict = Some(VerificationVerdict {
                method: Method::None,
                status: VerdictStatus::Skipped,
                detail: "verification disabled".into(),
                fuzz_runs_completed: 0,
                reproducer: None,
            });
            return rec;
        }
        if let IrValidity::Invalid(msg) = &validity {
            rec.verdict = Some(VerificationVerdict {
                method: Method::None,
                status: VerdictStatus::BuildFailure,
                detail: format!("optimized IR fails the verifier:\n{msg}"),
                fuzz_runs_completed: 0,
                reproducer: None,
            });
            rec.perf = Some(PerfRecord::incorrect(&entry.program_id));
            return rec;
        }

        let pair = IrPair::new(program, optimized, Provenance::LlmPipeline);
        let workdir = cfg.work_dir.join(&entry.program_id);
        let harness_llm = HarnessBackend {
            backend: self.backend,
            prompts: &self.prompts,
        };
        let llm = (cfg.verify.harness_mode == HarnessMode::Llm).then_some(&harness_llm);
        let (verdict, artifacts) = verify::verify_with_artifacts(&pair, &cfg.verify, &cfg.toolchain, llm, &workdir);
        let correct = verdict.is_correct();
        rec.verdict = Some(verdict);
        if !correct {
            rec.perf = Some(PerfRecord::incorrect(&entry.program_id));
            return rec;
        }
        if !cfg.bench.enabled {
            return rec;
        }
        match (self.bench_driver, artifacts) {
            (Some(driver), Some(art)) => {
                let perf = driver
                    .to_bench(&art.harness, cfg.bench.warmup, cfg.bench.iters)
                    .and_then(|b| build_bench(&b, &workdir.join("merged.ll"), &cfg.toolchain, &workdir))
                    .and_then(|bin| {
                        run_bench_record(&entry.program_id, &bin, &art.corpus, cfg.bench.iters, cfg.bench.warmup)
                    });
                match perf {
                    Ok(p) => rec.perf = Some(p),
                    Err(e) => rec.fail("bench_failure", e.to_string()),
                }
            }
            (None, _) => log::info!("{}: no benchmark driver configured; perf not measured", entry.program_id),
            (_, None) => log::info!("{}: verified without fuzz artifacts; perf not measured", entry.program_id),
        }
        rec
    }
}

fn ir_kind(e: &IrError) -> &'static str {
    e.kind()
}

/// Cuts a partial last line (crash mid-write) so appended records start on
/// a fresh line.
fn drop_torn_tail(results: &Path) -> std::io::Result<()> {
    let bytes = match std::fs::read(results) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map(|i| i + 1).unwrap_or(0);
    log::warn!("{}: dropping {} bytes of a torn last line", results.display(), bytes.len() - keep);
    std::fs::OpenOptions::new().write(true).open(results)?.set_len(keep as u64)
}

/// Program ids already present in a results file.
pub fn completed_ids(results: &Path) -> Result<BTreeSet<String>, BatchError> {
    let mut ids = BTreeSet::new();
    let file = match std::fs::File::open(results) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ids),
        Err(source) => {
            return Err(BatchError::Results {
                path: results.display().to_string(),
                source,
            })
        }
    };
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|source| BatchError::Results {
            path: results.display().to_string(),
            source,
        })?;
        // a torn last line from a crash is simply redone
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&line) {
            if let Some(id) = v.get("program_id").and_then(|x| x.as_str()) {
                ids.insert(id.to_string());
            }
        }
    }
    Ok(ids)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub processed: usize,
    pub skipped_resume: usize,
    pub ok: usize,
    pub failed: BTreeMap<String, usize>,
}

/// Runs the manifest with `config.workers` threads. Records are appended to
/// `results` in manifest order as soon as every earlier program is done.
pub fn run_batch(
    ctx: &BatchContext<'_>,
    manifest: &[ManifestEntry],
    results: &Path,
    resume: bool,
) -> Result<BatchSummary, BatchError> {
    let done = if resume {
        drop_torn_tail(results).map_err(|source| BatchError::Results {
            path: results.display().to_string(),
            source,
        })?;
        completed_ids(results)?
    } else {
        BTreeSet::new()
    };
    let todo: Vec<&ManifestEntry> = manifest.iter().filter(|e| !done.contains(&e.program_id)).collect();
    let res_err = |source| BatchError::Results {
        path: results.display().to_string(),
        source,
    };
    if let Some(dir) = results.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(res_err)?;
    }
    let mut out = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume)
        .truncate(!resume)
        .open(results)
        .map_err(res_err)?;

    let mut summary = BatchSummary {
        skipped_resume: manifest.len() - todo.len(),
        ..Default::default()
    };
    let workers = ctx.config.workers.max(1).min(todo.len().max(1));
    let total = todo.len();
    let queue = Mutex::new(todo.iter().enumerate());
    let (tx, rx) = mpsc::channel::<(usize, ResultRecord)>();
    let mut write_result = Ok(());
    std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            s.spawn(move || loop {
                let next = queue.lock().unwrap_or_else(|p| p.into_inner()).next();
                let Some((i, entry)) = next else { break };
                log::info!("[{}/{total}] {}", i + 1, entry.program_id);
                if tx.send((i, ctx.run_one(entry))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut next = 0;
        for (i, rec) in rx {
            pending.insert(i, rec);
            while let Some(rec) = pending.remove(&next) {
                next += 1;
                summary.processed += 1;
                match &rec.error {
                    None => summary.ok += 1,
                    Some(e) => *summary.failed.entry(e.kind.clone()).or_default() += 1,
                }
                if write_result.is_ok() {
                    let line = serde_json::to_string(&rec).expect("record serializes");
                    write_result = writeln!(out, "{line}").and_then(|_| out.flush());
                }
            }
        }
    });
    write_result.map_err(res_err)?;
    Ok(summary)
}

/// Pairs a program with its optimized text for stand-alone verification.
pub fn pair_from_record(rec: &ResultRecord, input: &IrProgram) -> Option<IrPair> {
    let text = rec.optimized_ir.as_ref()?;
    Some(IrPair::new(
        input.clone(),
        IrProgram::new(rec.program_id.clone(), text.clone(), crate::ir::Origin::LlmGenerated),
        Provenance::LlmPipeline,
    ))
}
