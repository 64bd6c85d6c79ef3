//! Regenerates tests/fixtures/replay: the fixture KB and a transcript store
//! recorded from scripted model responses.
//!
//!     cargo run -p intopt --example record_fixtures
//!
//! Needs `opt` (analysis output is part of the refinement prompts, so the
//! recorded hashes are tied to the opt version used here).

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use intopt::batch::{load_manifest, run_batch, BatchContext, Optimizer};
use intopt::config::{Mode, PipelineConfig};
use intopt::ir::{compile_o3_reference, load_ir};
use intopt::kb::{build_kb, BuildOptions};
use intopt::llm::{CannedBackend, RecordingBackend, TranscriptStore};

const BUILT_AT: &str = "2024-01-01T00:00:00Z";

struct Script {
    stem: &'static str,
    steps: &'static [(&'static str, &'static str)],
    advice: &'static str,
}

const SCRIPTS: &[Script] = &[
    Script {
        stem: "chocolateFeast",
        steps: &[
            ("Promote memory to registers", "Remove the allocas for n, c, m, bars and wrappers and keep the values in SSA registers."),
            ("Loop strength reduction", "Replace the repeated division and remainder by m inside the exchange loop with cheaper induction updates."),
        ],
        advice: "- Promote every alloca to SSA values; the function has no address-taken locals.\n- Keep the sdiv n, c at entry unchanged so that division semantics (including traps) are preserved.\n- The exchange loop runs while wrappers >= m; keep that boundary check as written and compute wrappers / m once per iteration.\n",
    },
    Script {
        stem: "reverse_bits",
        steps: &[
            ("Loop vectorization", "Vectorize the 32-iteration bit loop by processing several bit positions with wide instructions."),
            ("Full loop unrolling", "Fully unroll the fixed trip count loop and fold the shifts into straight-line code."),
        ],
        advice: "- The loop analysis shows a single innermost loop with a constant trip count of 32; full unrolling is profitable.\n- After unrolling, the shift/or chain is a bit reversal; use llvm.bitreverse.i32 on the input.\n- No library calls are involved, so no target library constraints apply.\n",
    },
    Script {
        stem: "numberOfOperations",
        steps: &[
            ("Dead code elimination", "Remove the stores to n.addr and ops that are never read after the loop exits."),
            ("Loop invariant code motion", "Hoist the loop-invariant loads out of the while loop body."),
        ],
        advice: "- Promote n and ops to registers; every store is dead once the values live in SSA form.\n- Keep the n > 0 loop guard; the loop exits only when n reaches zero.\n- Replace n % 2 == 0 with a test of the low bit, valid because n is positive inside the loop.\n",
    },
];

fn formulation(steps: &[(&str, &str)]) -> String {
    let mut s = String::from("<code>\n");
    for (t, c) in steps {
        s.push_str(&format!("<step>\n**Transformation**: {t}\n**Change**: {c}\n</step>\n"));
    }
    s.push_str("</code>\n");
    s
}

fn main() -> Result<()> {
    env_logger::init();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let replay = fixtures.join("replay");

    let mini = fixtures.join("mini-llvm");
    let docs = std::fs::read_to_string(mini.join("docs/Passes.rst"))?;
    let opts = BuildOptions {
        built_at: Some(BUILT_AT.into()),
        ..Default::default()
    };
    build_kb(&mini, &docs, &opts)?.kb.save(&replay.join("kb.json"))?;

    let mut cfg = PipelineConfig::load(&replay.join("intopt.toml"))?;
    cfg.mode = Mode::Record;
    let transcripts = replay.join("transcripts");
    if transcripts.is_dir() {
        std::fs::remove_dir_all(&transcripts)?;
    }
    let store = Arc::new(TranscriptStore::open(&transcripts)?);

    let mut canned = CannedBackend::new("gpt-5");
    for s in SCRIPTS {
        let program = load_ir(&fixtures.join(format!("programs/{}.ll", s.stem)))?;
        let optimized = compile_o3_reference(&program, &cfg.toolchain).context("opt -O3")?;
        let header = format!("; ModuleID = '{}.cc'", s.stem);
        // formulation embeds the IR in <ir>, refinement then realization in <code>
        canned = canned
            .respond_to(&format!("<ir>{header}"), &formulation(s.steps))
            .respond_to(&format!("<code>{header}"), &format!("<advice>\n{}</advice>\n", s.advice))
            .respond_to(
                &format!("<code>{header}"),
                &format!("Here is the optimized module.\n<code>\n{}</code>\n", optimized.text),
            );
    }
    let backend = RecordingBackend::new(canned, Arc::clone(&store));

    // one worker so the canned queues are consumed in stage order
    cfg.workers = 1;
    let ctx = BatchContext::prepare(&cfg, &backend, Optimizer::Pipeline)?;
    let manifest = load_manifest(&replay.join("manifest.txt"))?;
    let out = tempfile::tempdir()?;
    let summary = run_batch(&ctx, &manifest, &out.path().join("results.jsonl"), false)?;
    println!("{} transcripts, {summary:?}", store.len());
    Ok(())
}
