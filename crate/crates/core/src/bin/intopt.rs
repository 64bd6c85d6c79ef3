//! `intopt` command line.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use intopt::analysis::{collect_analysis, render_bundle, AnalysisBundle, AnalysisNameMap};
use intopt::batch::{load_manifest, run_batch, BatchContext, Optimizer};
use intopt::bench::{build_bench, run_bench_record, BenchDriver, ExternalDriver};
use intopt::config::{ConfigError, Mode, PipelineConfig};
use intopt::ir::{compile_o3_reference, load_ir_with, validate_ir, IrPair, Provenance};
use intopt::kb::{build_kb, BuildOptions, DepOptions, KnowledgeBase};
use intopt::pipeline::parse::{parse_advice, parse_steps};
use intopt::pipeline::{Pipeline, StagePromptSet};
use intopt::report::{compare_pairwise, load_results, DEFAULT_EQUAL_BAND};
use intopt::retrieval::{build_index, resolve_analysis_set};
use intopt::strategy::{OptimizationStrategy, TransformationAction};
use intopt::verify::{self, HarnessBackend, HarnessMode};

#[derive(Parser)]
#[command(name = "intopt", version, about = "Intent-driven LLVM IR optimization")]
struct Cli {
    /// Pipeline configuration (TOML). Falls back to $INTOPT_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Knowledge base operations.
    Kb {
        #[command(subcommand)]
        cmd: KbCmd,
    },
    /// Top-m passes for one action.
    Retrieve {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, default_value_t = 3)]
        m: usize,
    },
    /// Retrieval plus analysis collection for a strategy.
    Analyze {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        ir: PathBuf,
        /// Strategy as JSON, a `<step>`/`<advice>` response, or one action per line.
        #[arg(long)]
        strategy: PathBuf,
        #[arg(short, default_value_t = 3)]
        m: usize,
    },
    /// Optimize one program.
    Optimize(OptimizeArgs),
    /// Check an (unoptimized, optimized) pair.
    Verify(VerifyArgs),
    /// Time an (unoptimized, optimized) pair over a corpus.
    Bench(BenchArgs),
    /// Aggregate results.jsonl.
    Report(ReportArgs),
    /// Build (unopt, -O3, strategy) training triples.
    Distill(DistillArgs),
    /// Run a manifest end to end.
    Batch(BatchArgs),
}

#[derive(Subcommand)]
enum KbCmd {
    /// Mine PassRegistry.def, Transforms sources and pass docs.
    Build {
        #[arg(long)]
        llvm_src: PathBuf,
        /// Pass documentation (Passes.rst).
        #[arg(long)]
        docs: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also count getCachedResult<T> as a dependency.
        #[arg(long)]
        include_cached: bool,
        /// Fixed build stamp (RFC 3339).
        #[arg(long)]
        built_at: Option<String>,
    },
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    ir: PathBuf,
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Backend id for every stage.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, value_enum, default_value_t = Optimizer::Pipeline)]
    mode: Optimizer,
    /// Live calls, recording, or transcript replay.
    #[arg(long, value_enum)]
    llm_mode: Option<Mode>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    emit_strategy: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    unopt: PathBuf,
    #[arg(long)]
    opt: PathBuf,
    #[arg(long)]
    runs: Option<u64>,
    #[arg(long, value_enum)]
    harness_mode: Option<HarnessMode>,
    /// Skip Alive2 and go straight to differential testing.
    #[arg(long)]
    skip_alive: bool,
    /// Keep the build artifacts here instead of a temporary directory.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    unopt: PathBuf,
    #[arg(long)]
    opt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    /// Harness-to-benchmark rewriter; defaults to the configured driver.
    #[arg(long)]
    driver: Option<PathBuf>,
    /// Driver arguments ({fuzz_cc}, {bench_cc}, {warmup}, {iters} are substituted).
    #[arg(long = "driver-arg", allow_hyphen_values = true)]
    driver_args: Vec<String>,
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
    /// Second results file for a pairwise win/tie/loss comparison.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Write per-program rows here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value = "IntOpt")]
    label: String,
}

#[derive(Args)]
struct DistillArgs {
    /// Unoptimized programs; the -O3 side is produced with `opt -O3`.
    #[arg(long, required = true, num_args = 1..)]
    ir: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum)]
    llm_mode: Option<Mode>,
}

#[derive(Args)]
struct BatchArgs {
    /// One IR path per line.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    results: PathBuf,
    /// Live calls, recording, or transcript replay.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum, default_value_t = Optimizer::Pipeline)]
    optimizer: Optimizer,
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    let cfg = || PipelineConfig::resolve(cli.config.as_deref());
    match cli.cmd {
        Cmd::Kb {
            cmd:
                KbCmd::Build {
                    llvm_src,
                    docs,
                    output,
                    include_cached,
                    built_at,
                },
        } => {
            let docs_text = std::fs::read_to_string(&docs).with_context(|| format!("reading {}", docs.display()))?;
            let opts = BuildOptions {
                deps: DepOptions { include_cached },
                built_at,
            };
            let out = build_kb(&llvm_src, &docs_text, &opts)?;
            out.kb.save(&output)?;
            if json {
                println!(
                    "{}",
                    serde_json::json!({"passes": out.kb.len(), "warnings": out.warnings, "unlocated": out.unlocated})
                );
            } else {
                println!("{} passes -> {}", out.kb.len(), output.display());
                if !out.unlocated.is_empty() {
                    println!("no source found for: {}", out.unlocated.join(", "));
                }
            }
        }
        Cmd::Retrieve { kb, query, m } => {
            let kb = KnowledgeBase::load(&kb)?;
            let hits = build_index(&kb)?.retrieve(&query, m)?;
            if json {
                println!("{}", serde_json::to_string(&hits)?);
            } else {
                for h in hits {
                    println!("{}\t{:.6}\t{}", h.pass_id, h.score, h.rank);
                }
            }
        }
        Cmd::Analyze { kb, ir, strategy, m } => {
            let cfg = cfg()?;
            let kb = KnowledgeBase::load(&kb)?;
            let index = build_index(&kb)?;
            let program = load_ir_with(&ir, cfg.tokenizer.build().as_ref())?;
            let text = std::fs::read_to_string(&strategy).with_context(|| format!("reading {}", strategy.display()))?;
            let strategy = strategy_from_text(&text);
            let analyses = resolve_analysis_set(&strategy, &index, &kb, m)?;
            let name_map = name_map(&cfg)?;
            let bundle = if analyses.is_empty() {
                AnalysisBundle::empty(&program.id)
            } else {
                collect_analysis(&program, &analyses, &name_map, &cfg.toolchain)?
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&bundle)?);
            } else {
                print!("{}", render_bundle(&bundle));
            }
        }
        Cmd::Optimize(a) => optimize(cfg()?, a, json)?,
        Cmd::Verify(a) => {
            let mut cfg = cfg()?;
            if let Some(r) = a.runs {
                cfg.verify.runs = r;
            }
            if let Some(h) = a.harness_mode {
                cfg.verify.harness_mode = h;
            }
            cfg.verify.skip_alive |= a.skip_alive;
            let pair = load_pair(&cfg, &a.unopt, &a.opt)?;
            let (_tmp, dir) = work_dir(a.work_dir)?;
            let router;
            let prompts;
            let llm = if cfg.verify.harness_mode == HarnessMode::Llm {
                router = cfg.build_backend()?;
                prompts = prompt_set(&cfg)?;
                Some(HarnessBackend {
                    backend: &router,
                    prompts: &prompts,
                })
            } else {
                None
            };
            let v = verify::verify(&pair, &cfg.verify, &cfg.toolchain, llm.as_ref(), &dir);
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Cmd::Bench(a) => bench(cfg()?, a)?,
        Cmd::Report(a) => {
            let report = load_results(&a.results)?;
            let comparison = match &a.compare {
                Some(other) => {
                    let other = load_results(other)?;
                    let perf = |r: &intopt::report::EvaluationReport| {
                        r.per_program.iter().map(|p| p.perf.clone()).collect::<Vec<_>>()
                    };
                    Some(compare_pairwise(&perf(&report), &perf(&other), DEFAULT_EQUAL_BAND)?)
                }
                None => None,
            };
            if let Some(csv) = &a.csv {
                std::fs::write(csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
            }
            let summary = serde_json::json!({
                "n_programs": report.n_programs,
                "correctness_alive2": report.correctness_alive2,
                "correctness_combined": report.correctness_combined,
                "avg_speedup": report.avg_speedup,
                "buckets": report.buckets,
                "comparison": comparison.as_ref().map(|c| serde_json::json!({
                    "band": c.band, "wins": c.a.wins, "ties": c.a.ties, "losses": c.a.losses,
                })),
            });
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{}", report.to_markdown(&a.label));
                if let Some(c) = &comparison {
                    println!(
                        "\nvs {}: {} wins / {} ties / {} losses (band {:.2}-{:.2})",
                        a.compare.as_ref().expect("set").display(),
                        c.a.wins,
                        c.a.ties,
                        c.a.losses,
                        c.band.0,
                        c.band.1
                    );
                }
                println!("\n{}", serde_json::to_string(&summary)?);
            }
        }
        Cmd::Distill(a) => distill(cfg()?, a, json)?,
        Cmd::Batch(a) => {
            let mut cfg = cfg()?;
            if let Some(m) = a.mode {
                cfg.mode = m;
            }
            if let Some(w) = a.workers {
                cfg.workers = w;
            }
            // config errors abort before any program runs
            cfg.check_paths(true, a.optimizer == Optimizer::Pipeline)?;
            let router = cfg.build_backend()?;
            let manifest = load_manifest(&a.manifest)?;
            let driver = cfg.bench.driver.clone();
            let mut ctx = BatchContext::prepare(&cfg, &router, a.optimizer)?;
            if cfg.bench.enabled {
                ctx.bench_driver = driver.as_ref().map(|d| d as &(dyn BenchDriver + Sync));
            }
            let summary = run_batch(&ctx, &manifest, &a.results, a.resume)?;
            if json {
                println!("{}", serde_json::to_string(&summary)?);
            } else {
                println!(
                    "{} processed, {} ok, {} skipped (resume) -> {}",
                    summary.processed,
                    summary.ok,
                    summary.skipped_resume,
                    a.results.display()
                );
                for (kind, n) in &summary.failed {
                    println!("  {kind}: {n}");
                }
            }
        }
    }
    Ok(())
}

/// JSON strategy file, `<step>` response, `<advice>` response, or plain lines.
fn strategy_from_text(text: &str) -> OptimizationStrategy {
    if let Ok(s) = serde_json::from_str::<OptimizationStrategy>(text) {
        return s;
    }
    if let Ok(s) = parse_steps(text) {
        if !s.is_empty() {
            return s;
        }
    }
    if let Ok(s) = parse_advice(text) {
        return s;
    }
    let actions = text
        .lines()
        .map(|l| l.trim().trim_start_matches(['-', '*']).trim())
        .filter(|l| !l.is_empty())
        .map(|l| TransformationAction::new(l, ""))
        .collect();
    OptimizationStrategy::initial(actions, text)
}

fn name_map(cfg: &PipelineConfig) -> Result<AnalysisNameMap> {
    Ok(match &cfg.analysis_map {
        Some(p) => AnalysisNameMap::load(p)?,
        None => AnalysisNameMap::builtin(),
    })
}

fn prompt_set(cfg: &PipelineConfig) -> Result<StagePromptSet> {
    Ok(match &cfg.prompts_dir {
        Some(d) => StagePromptSet::from_dir(d)?,
        None => StagePromptSet::default(),
    })
}

fn load_pair(cfg: &PipelineConfig, unopt: &Path, opt: &Path) -> Result<IrPair> {
    let tok = cfg.tokenizer.build();
    Ok(IrPair::new(
        load_ir_with(unopt, tok.as_ref())?,
        load_ir_with(opt, tok.as_ref())?,
        Provenance::LlmPipeline,
    ))
}

fn work_dir(explicit: Option<PathBuf>) -> Result<(Option<tempfile::TempDir>, PathBuf)> {
    match explicit {
        Some(d) => {
            std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
            Ok((None, d))
        }
        None => {
            let t = tempfile::tempdir()?;
            let p = t.path().to_path_buf();
            Ok((Some(t), p))
        }
    }
}

fn optimize(mut cfg: PipelineConfig, a: OptimizeArgs, json: bool) -> Result<()> {
    if let Some(kb) = a.kb {
        cfg.kb = Some(kb);
    }
    if let Some(b) = a.backend {
        cfg.stages = Default::default();
        cfg.stages.default = Some(b);
    }
    if let Some(m) = a.llm_mode {
        cfg.mode = m;
    }
    cfg.check_paths(true, a.mode == Optimizer::Pipeline)?;
    let router = cfg.build_backend()?;
    let prompts = prompt_set(&cfg)?;
    let program = load_ir_with(&a.ir, cfg.tokenizer.build().as_ref())?;
    validate_ir(&program, &cfg.toolchain)?;
    intopt::ir::enforce_program_cap(&program, cfg.token_cap)?;
    let pipeline = Pipeline::new(&router, &prompts, &cfg.toolchain);
    let (generated, strategy) = match a.mode {
        Optimizer::Pipeline => {
            let kb = KnowledgeBase::load(cfg.kb.as_ref().expect("checked"))?;
            let index = build_index(&kb)?;
            let out = pipeline.run(&program, &kb, &index, &name_map(&cfg)?, cfg.retrieval_m)?;
            (out.optimized, Some(out.refined))
        }
        Optimizer::Baseline => (pipeline.baseline(&program)?, None),
    };
    if let (Some(path), Some(s)) = (&a.emit_strategy, &strategy) {
        std::fs::write(path, s.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    match &a.output {
        Some(path) => std::fs::write(path, &generated.program.text).with_context(|| format!("writing {}", path.display()))?,
        None if !json => print!("{}", generated.program.text),
        None => {}
    }
    if json {
        println!(
            "{}",
            serde_json::json!({"validity": generated.validity, "strategy": strategy, "output": a.output})
        );
    }
    Ok(())
}

fn bench(cfg: PipelineConfig, a: BenchArgs) -> Result<()> {
    let driver = match a.driver {
        Some(program) => ExternalDriver {
            program,
            args: a.driver_args,
        },
        None => match cfg.bench.driver.clone() {
            Some(d) => d,
            None => bail!(ConfigError::Missing(
                "bench driver (pass --driver or set [bench.driver] in the config)".into()
            )),
        },
    };
    let iters = a.iters.unwrap_or(cfg.bench.iters);
    let warmup = a.warmup.unwrap_or(cfg.bench.warmup);
    let pair = load_pair(&cfg, &a.unopt, &a.opt)?;
    let (_tmp, dir) = work_dir(a.work_dir)?;
    let merged = verify::merge_for_diff(&pair).map_err(|e| anyhow::anyhow!("{e}"))?;
    let harness = verify::template_harness(&merged)?;
    let bench = driver.to_bench(&harness, warmup, iters)?;
    let merged_ll = merged.program.write_to(&dir, "bench_merged.ll")?;
    let bin = build_bench(&bench, &merged_ll, &cfg.toolchain, &dir)?;
    let rec = run_bench_record(&pair.unopt.id, &bin, &a.corpus, iters, warmup)?;
    println!("{}", serde_json::to_string_pretty(&rec)?);
    Ok(())
}

fn distill(mut cfg: PipelineConfig, a: DistillArgs, json: bool) -> Result<()> {
    if let Some(m) = a.llm_mode {
        cfg.mode = m;
    }
    cfg.check_paths(true, false)?;
    let router = cfg.build_backend()?;
    let prompts = prompt_set(&cfg)?;
    let pipeline = Pipeline::new(&router, &prompts, &cfg.toolchain);
    let tok = cfg.tokenizer.build();
    let mut out = std::fs::File::create(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let (mut written, mut failed) = (0usize, 0usize);
    for path in &a.ir {
        let result = (|| -> Result<_> {
            let unopt = load_ir_with(path, tok.as_ref())?;
            let o3 = compile_o3_reference(&unopt, &cfg.toolchain)?;
            let pair = IrPair::new(unopt, o3, Provenance::CompilerO3);
            Ok(pipeline.distill(&pair, cfg.token_cap)?)
        })();
        match result {
            Ok(triple) => {
                writeln!(out, "{}", serde_json::to_string(&triple)?)?;
                written += 1;
            }
            Err(e) => {
                log::warn!("{}: {e:#}", path.display());
                failed += 1;
            }
        }
    }
    if json {
        println!("{}", serde_json::json!({"written": written, "failed": failed}));
    } else {
        println!("{written} triples -> {} ({failed} failed)", a.output.display());
    }
    Ok(())
}
