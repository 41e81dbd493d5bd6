use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cases.json")
}

fn groundqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groundqa"))
        .args(args)
        .env_remove("GROUNDQA_BACKEND")
        .env_remove("GROUNDQA_CONFIG")
        .env_remove("LLM_API_BASE")
        .output()
        .expect("spawn groundqa")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_script(dir: &Path, queues: Value) -> PathBuf {
    let path = dir.join("script.json");
    fs::write(&path, queues.to_string()).unwrap();
    path
}

fn repeat(s: &str, n: usize) -> Value {
    Value::Array(vec![Value::String(s.into()); n])
}

fn verdicts(essential: &[u32], total: u32) -> String {
    (1..=total)
        .map(|id| {
            let label = if essential.contains(&id) { "essential" } else { "irrelevant" };
            format!("{id}: sentence -> {label} -> 7 -> because")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_subtask1_writes_submission_manifest_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(
        dir.path(),
        json!({
            "1/st1.generate": ["reasoning: r\nclinician_question: Why was heparin stopped."],
            "2/st1.generate": ["clinician_question: Why was the feeding tube placed for her?"],
        }),
    );
    let out = dir.path().join("st1.json");
    let o = groundqa(&[
        "--backend", "scripted", "--script", p(&script), "--jobs", "1",
        "run", "--subtask", "1", "--dataset", p(&fixture()), "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sub: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(sub["1"]["clinician_question"], "Why was heparin stopped?");
    assert_eq!(sub["2"]["clinician_question"], "Why was the feeding tube placed for her?");

    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("st1.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["upstream_calls"], 2);
    assert_eq!(manifest["ledger"]["st1.generate"], 2);
    assert_eq!(manifest["backend"], "scripted");
    assert_eq!(manifest["cases_ok"], 2);
    assert!(manifest["program_hashes"]["st1.interpretation"].is_string());

    let meta: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("runs/1/st1.meta")).unwrap()).unwrap();
    assert_eq!(meta["case_id"], "1");
    assert_eq!(meta["calls"]["st1.generate"], 1);
}

#[test]
fn partial_failure_exits_2_and_keeps_good_cases() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), json!({"1/st1.generate": ["clinician_question: Why?"]}));
    let out = dir.path().join("st1.json");
    let o = groundqa(&[
        "--backend", "scripted", "--script", p(&script),
        "run", "--subtask", "1", "--dataset", p(&fixture()), "--out", p(&out),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("case 2"));
    let sub: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(sub.as_object().unwrap().len(), 1);
}

#[test]
fn all_cases_failing_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), json!({}));
    let o = groundqa(&[
        "--backend", "scripted", "--script", p(&script),
        "run", "--subtask", "1", "--dataset", p(&fixture()), "--out", p(&dir.path().join("x.json")),
    ]);
    assert_eq!(code(&o), 1);
}

fn st2_script(dir: &Path) -> PathBuf {
    write_script(
        dir,
        json!({
            "1/st2.classify": repeat(&verdicts(&[2, 4], 4), 5),
            "2/st2.classify": repeat(&verdicts(&[1, 3], 3), 5),
        }),
    )
}

#[test]
fn evidence_run_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("st2.json");
    let o = groundqa(&[
        "--backend", "scripted", "--script", p(&st2_script(dir.path())),
        "run", "--subtask", "2", "--dataset", p(&fixture()), "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let report_path = dir.path().join("report.json");
    let o = groundqa(&[
        "evaluate", "--subtask", "2", "--submission", p(&out), "--gold", p(&fixture()),
        "--format", "json", "--json-out", p(&report_path),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    let saved: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(printed, saved);
    // pooled: predicted {2,4} + {1,3}, essential {2,3} + {1,3}; strict TP 3 of 4 and 4
    let cols = &printed["columns"];
    assert!((cols["Strict Micro P"].as_f64().unwrap() - 0.75).abs() < 1e-12, "{cols}");
    assert!((cols["Strict Micro R"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert_eq!(printed["cases"], 2);

    let o = groundqa(&["evaluate", "--subtask", "2", "--submission", p(&out), "--gold", p(&fixture())]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Strict Micro"));
}

#[test]
fn evaluate_rejects_unknown_case_ids() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("sub.json");
    fs::write(&sub, r#"{"1": {"essential": [2]}, "zz9": {"essential": [1]}}"#).unwrap();
    let o = groundqa(&["evaluate", "--subtask", "2", "--submission", p(&sub), "--gold", p(&fixture())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("zz9"), "{}", stderr(&o));
}

#[test]
fn cache_only_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let first = dir.path().join("a.json");
    let o = groundqa(&[
        "--backend", "scripted", "--script", p(&st2_script(dir.path())), "--cache-dir", p(&cache),
        "run", "--subtask", "2", "--dataset", p(&fixture()), "--out", p(&first),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let second = dir.path().join("b.json");
    let o = groundqa(&[
        "--backend", "cache-only", "--cache-dir", p(&cache),
        "run", "--subtask", "2", "--dataset", p(&fixture()), "--out", p(&second),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("b.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["upstream_calls"], 0);
    assert_eq!(manifest["total_calls"], 10);
}

#[test]
fn optimize_alignment_writes_program_and_trials() {
    let dir = tempfile::tempdir().unwrap();
    let links = "answer_sentence_1: [2, 3] (confidence=[0.95, 0.97])\nanswer_sentence_2: [3] (confidence=[0.99])";
    let script = write_script(
        dir.path(),
        json!({
            "opt.propose": ["### Variant 1\nAlign each answer sentence with the note sentences that support it."],
            "st4.align": repeat(links, 20),
            "st4.reflect": repeat(links, 20),
            "st4.verify": repeat(links, 20),
        }),
    );
    let out_dir = dir.path().join("programs");
    let o = groundqa(&[
        "--backend", "scripted", "--script", p(&script),
        "optimize", "--subtask", "4", "--dev", p(&fixture()), "--out-dir", p(&out_dir),
        "--max-trials", "2", "--num-instruction-candidates", "2", "--num-demo-subsets", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("best score"));
    assert!(out_dir.join("st4.optimized").exists());
    let trials = fs::read_to_string(out_dir.join("trials.csv")).unwrap();
    let lines: Vec<&str> = trials.lines().collect();
    assert_eq!(lines[0], "trial,instruction_hash,demo_count,score");
    assert_eq!(lines.len(), 3);

    // the tuned program is picked up by a later run
    let script = write_script(
        dir.path(),
        json!({"st4.align": repeat(links, 10), "st4.reflect": repeat(links, 10), "st4.verify": repeat(links, 10)}),
    );
    let out = dir.path().join("st4.json");
    let o = groundqa(&[
        "--backend", "scripted", "--script", p(&script),
        "run", "--subtask", "4", "--dataset", p(&fixture()), "--programs", p(&out_dir), "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tuned: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("st4.optimized")).unwrap()).unwrap();
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("st4.json.manifest.json")).unwrap()).unwrap();
    assert!(manifest["program_hashes"].get(tuned["name"].as_str().unwrap()).is_some());
}

#[test]
fn optimize_requires_gold_on_dev_cases() {
    let dir = tempfile::tempdir().unwrap();
    let mut cases: Value = serde_json::from_str(&fs::read_to_string(fixture()).unwrap()).unwrap();
    cases[1].as_object_mut().unwrap().remove("gold");
    let dev = dir.path().join("dev.json");
    fs::write(&dev, cases.to_string()).unwrap();
    let script = write_script(dir.path(), json!({}));
    let o = groundqa(&[
        "--backend", "scripted", "--script", p(&script),
        "optimize", "--subtask", "2", "--dev", p(&dev), "--out-dir", p(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("gold"), "{}", stderr(&o));
}

#[test]
fn validate_flags_format_violations() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("st3.json");
    fs::write(&sub, r#"{"1": {"answer": "Heparin was stopped [3]."}, "2": {"answer": "A tube was placed."}}"#).unwrap();
    let o = groundqa(&["validate", "--submission", p(&sub), "--subtask", "3"]);
    assert_eq!(code(&o), 2);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("1 format violations"), "{stdout}");
}

#[test]
fn usage_and_configuration_errors() {
    assert_eq!(code(&groundqa(&["--help"])), 0);
    assert_eq!(code(&groundqa(&["run", "--subtask", "7"])), 1);
    let o = groundqa(&["--set", "nonsense=1", "validate", "--dataset", p(&fixture())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nonsense"));
    let o = groundqa(&[
        "--backend", "cache-only", "run", "--subtask", "1", "--dataset", p(&fixture()), "--out", "/dev/null",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--cache-dir"), "{}", stderr(&o));
}

#[test]
fn config_file_and_set_layering() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("groundqa.toml");
    fs::write(&config, "R_st2 = 3\n[gateway]\nbackend = \"scripted\"\n").unwrap();
    let script = write_script(
        dir.path(),
        json!({
            "1/st2.classify": repeat(&verdicts(&[1], 4), 2),
            "2/st2.classify": repeat(&verdicts(&[1], 3), 2),
        }),
    );
    let out = dir.path().join("st2.json");
    // the file asks for 3 runs, --set lowers it to 2; scripted backend comes from the file
    let o = groundqa(&[
        "--config", p(&config), "--script", p(&script), "--set", "R_st2=2",
        "run", "--subtask", "2", "--dataset", p(&fixture()), "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("st2.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["R_st2"], 2);
    assert_eq!(manifest["ledger"]["st2.classify"], 4);
}
