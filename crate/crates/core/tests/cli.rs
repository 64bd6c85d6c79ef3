//! End-to-end runs of the `intopt` binary on the committed fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use intopt::toolchain::{Tool, ToolchainConfig};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn replay() -> PathBuf {
    fixtures().join("replay")
}

fn intopt(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_intopt"));
    c.env_remove("INTOPT_CONFIG").args(args);
    c
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn have_opt(test: &str) -> bool {
    match ToolchainConfig::discover().resolve(Tool::Opt) {
        Ok(_) => true,
        Err(e) => {
            eprintln!("SKIP {test}: {e}");
            false
        }
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn batch(manifest: &Path, results: &Path, extra: &[&str]) -> Output {
    let cfg = replay().join("intopt.toml");
    let mut args = vec!["--config", p(&cfg), "batch", "--mode", "replay", "--manifest", p(manifest), "--results", p(results)];
    args.extend_from_slice(extra);
    intopt(&args).output().unwrap()
}

#[test]
fn invalid_ir_is_recorded_and_the_rest_complete() {
    if !have_opt("invalid_ir_is_recorded_and_the_rest_complete") {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.ll");
    std::fs::write(&broken, "define i32 @f( {\n  ret i32 %nope\n").unwrap();
    let programs = fixtures().join("programs");
    let manifest = dir.path().join("manifest.txt");
    std::fs::write(
        &manifest,
        format!(
            "{}\n{}\n{}\n",
            programs.join("chocolateFeast.ll").display(),
            broken.display(),
            programs.join("reverse_bits.ll").display()
        ),
    )
    .unwrap();
    let results = dir.path().join("results.jsonl");
    let stdout = ok(batch(&manifest, &results, &["--json"]));
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["ok"], 2);
    assert_eq!(summary["failed"]["invalid_ir"], 1);

    let recs: Vec<serde_json::Value> = std::fs::read_to_string(&results)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let ids: Vec<&str> = recs.iter().map(|r| r["program_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["chocolateFeast", "broken", "reverse_bits"]);
    assert_eq!(recs[1]["error"]["kind"], "invalid_ir");
    assert!(recs[1]["optimized_ir"].is_null());
    for r in [&recs[0], &recs[2]] {
        assert!(r["error"].is_null());
        assert!(r["optimized_ir"].as_str().unwrap().contains("define"));
    }
}

#[test]
fn missing_opt_is_a_config_error_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results.jsonl");
    let cfg = replay().join("intopt.toml");
    let manifest = replay().join("manifest.txt");
    let out = intopt(&["--config", p(&cfg), "batch", "--manifest", p(&manifest), "--results", p(&results)])
        .env("INTOPT_OPT", dir.path().join("no-such-opt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("opt"), "{err}");
    assert!(!results.exists(), "no work may start after a config error");
}

#[test]
fn undefined_backend_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("intopt.toml");
    std::fs::write(
        &cfg,
        format!(
            "kb = {:?}\ntranscripts = {:?}\nmode = \"replay\"\n[[backends]]\nid = \"a\"\nkind = \"completion\"\n[stages]\nrefinement = \"b\"\n",
            replay().join("kb.json"),
            replay().join("transcripts")
        ),
    )
    .unwrap();
    let results = dir.path().join("r.jsonl");
    let manifest = replay().join("manifest.txt");
    let out = intopt(&["--config", p(&cfg), "batch", "--manifest", p(&manifest), "--results", p(&results)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("backend `b` is referenced but not defined"), "{err}");
}

#[test]
fn resume_skips_completed_programs_and_repairs_a_torn_line() {
    if !have_opt("resume_skips_completed_programs_and_repairs_a_torn_line") {
        return;
    }
    let golden = std::fs::read_to_string(replay().join("expected_results.jsonl")).unwrap();
    let first = golden.lines().next().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results.jsonl");
    std::fs::write(&results, format!("{first}\n{{\"program_id\":\"reverse_b")).unwrap();

    let stdout = ok(batch(&replay().join("manifest.txt"), &results, &["--resume", "--json"]));
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["skipped_resume"], 1);
    assert_eq!(summary["processed"], 2);
    assert_eq!(std::fs::read_to_string(&results).unwrap(), golden);

    // nothing left to do
    let stdout = ok(batch(&replay().join("manifest.txt"), &results, &["--resume", "--json"]));
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["processed"], 0);
    assert_eq!(std::fs::read_to_string(&results).unwrap(), golden);
}

#[test]
fn optimize_replays_one_program() {
    if !have_opt("optimize_replays_one_program") {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let out_ll = dir.path().join("out.ll");
    let strategy = dir.path().join("strategy.json");
    let cfg = replay().join("intopt.toml");
    let ir = fixtures().join("programs/reverse_bits.ll");
    ok(intopt(&[
        "--config",
        p(&cfg),
        "optimize",
        "--ir",
        p(&ir),
        "-o",
        p(&out_ll),
        "--emit-strategy",
        p(&strategy),
    ])
    .output()
    .unwrap());
    let golden: Vec<serde_json::Value> = std::fs::read_to_string(replay().join("expected_results.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let rec = golden.iter().find(|r| r["program_id"] == "reverse_bits").unwrap();
    assert_eq!(std::fs::read_to_string(&out_ll).unwrap(), rec["optimized_ir"].as_str().unwrap());
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&strategy).unwrap()).unwrap();
    assert_eq!(s["stage"], "refined");
    assert_eq!(s, rec["refined"]);
}

#[test]
fn kb_build_and_retrieve() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb.json");
    let mini = fixtures().join("mini-llvm");
    let docs = mini.join("docs/Passes.rst");
    ok(intopt(&["kb", "build", "--llvm-src", p(&mini), "--docs", p(&docs), "-o", p(&kb), "--built-at", "2024-01-01T00:00:00Z"])
        .output()
        .unwrap());
    assert_eq!(
        std::fs::read(&kb).unwrap(),
        std::fs::read(replay().join("kb.json")).unwrap(),
        "committed fixture KB is stale"
    );

    let tsv = ok(intopt(&["retrieve", "--kb", p(&kb), "--query", "vectorize the innermost loop", "-m", "2"])
        .output()
        .unwrap());
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "LoopVectorizePass");
    assert_eq!(rows[0][2], "1");
    assert_eq!(rows[1][2], "2");
    let s0: f64 = rows[0][1].parse().unwrap();
    let s1: f64 = rows[1][1].parse().unwrap();
    assert!(s0 >= s1 && s0 <= 1.0);
}

#[test]
fn analyze_renders_a_bundle() {
    if !have_opt("analyze_renders_a_bundle") {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let strategy = dir.path().join("strategy.txt");
    std::fs::write(&strategy, "- Loop vectorization of the bit loop\n").unwrap();
    let kb = replay().join("kb.json");
    let ir = fixtures().join("programs/reverse_bits.ll");
    let out = ok(intopt(&["analyze", "--kb", p(&kb), "--ir", p(&ir), "--strategy", p(&strategy), "-m", "1"])
        .output()
        .unwrap());
    assert!(out.contains("LoopAnalysis (print<loops>)"), "{out}");
    assert!(out.contains("Loop at depth 1"), "{out}");
    assert!(out.contains("TargetLibraryAnalysis"), "{out}");
}

#[test]
fn report_on_replayed_results() {
    let results = replay().join("expected_results.jsonl");
    let md = ok(intopt(&["report", "--results", p(&results), "--label", "replay"]).output().unwrap());
    // verification was disabled for the replay, so nothing counts as correct
    assert!(md.contains("| replay | 0.0% (0) | 0.0% (0) | 0.000× |"), "{md}");

    let js = ok(intopt(&["--json", "report", "--results", p(&results), "--compare", p(&results)])
        .output()
        .unwrap());
    let v: serde_json::Value = serde_json::from_str(&js).unwrap();
    assert_eq!(v["n_programs"], 3);
    assert_eq!(v["comparison"]["ties"], 3);
}

#[test]
fn verify_prints_a_verdict() {
    let tc = ToolchainConfig::discover();
    if tc.resolve(Tool::Llc).is_err() || tc.resolve(Tool::ClangXX).is_err() {
        eprintln!("SKIP verify_prints_a_verdict: llc/clang++ not available");
        return;
    }
    let a = fixtures().join("verify/half_div.ll");
    let b = fixtures().join("verify/half_shr.ll");
    let js = ok(intopt(&["verify", "--unopt", p(&a), "--opt", p(&b), "--runs", "10000", "--skip-alive"])
        .output()
        .unwrap());
    let v: serde_json::Value = serde_json::from_str(&js).unwrap();
    assert_eq!(v["status"], "fuzz_crash");
    assert_eq!(v["method"], "diff_test");
}
