use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mutaprobe_core::corpus::LanguageId;
use mutaprobe_core::mutator::{build_plan, write_mutations, MutationKind, PlanConfig, WhitespaceTokenizer};
use mutaprobe_core::runner::{
    append_jsonl, read_jsonl, LedgerPaths, OutcomeRecord, PromptRef, StubBackend, StubServer,
};
use serde_json::{json, Value};

fn mutaprobe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mutaprobe"))
        .args(args)
        .current_dir(dir)
        .env_remove("MUTAPROBE_ENDPOINT")
        .env_remove("MUTAPROBE_TIMEOUT_S")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn toy(dir: &Path) {
    let o = mutaprobe(dir, &["init-toy", "."]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn edit_config(dir: &Path, f: impl FnOnce(&mut Value)) {
    let path = dir.join("run.json");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn toy_ingest_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let o = mutaprobe(dir.path(), &["ingest", "--config", "run.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("out/ingest/corpus_stats.json").exists());
    assert!(!dir.path().join("out/.mutaprobe.lock").exists());
}

#[test]
fn malformed_corpus_line_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let mut text = fs::read_to_string(dir.path().join("tasks.jsonl")).unwrap();
    text.push('\n');
    text.push_str("{\"task_id\": \"x\"\n");
    fs::write(dir.path().join("tasks.jsonl"), text).unwrap();
    let o = mutaprobe(dir.path(), &["ingest", "--config", "run.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = mutaprobe(dir.path(), &["ingest", "--config", "nope.json"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn generate_before_mutate_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let o = mutaprobe(dir.path(), &["generate", "--config", "run.json"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn held_lock_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/.mutaprobe.lock"), "").unwrap();
    let o = mutaprobe(dir.path(), &["ingest", "--config", "run.json"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(dir.path().join("out/.mutaprobe.lock").exists());
}

#[test]
fn unreachable_endpoint_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    edit_config(dir.path(), |v| {
        v["runner"]["retry"] = json!({"max_attempts": 2, "base_delay_ms": 1, "max_delay_ms": 2});
    });
    let o = mutaprobe(dir.path(), &["mutate", "--config", "run.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = mutaprobe(
        dir.path(),
        &["generate", "--config", "run.json", "--endpoint", "http://127.0.0.1:1", "--timeout-s", "2"],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn bad_tau_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let o = mutaprobe(dir.path(), &["ingest", "--config", "run.json", "--tau", "0"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

/// Two C units and one Python unit, one model, T=0 only. Flip counts are
/// 12 and 5 for C, 10 for Python, so at tau 10 the fractions are 1/2 and 1/1.
#[test]
fn analyze_affected_fraction_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let prompt = "alpha beta gamma delta epsilon";
    let tasks = [
        ("c-787", LanguageId::C, "CWE-787", true, 12usize),
        ("c-119", LanguageId::C, "CWE-119", true, 5),
        ("py-078", LanguageId::Py, "CWE-078", false, 10),
    ];
    let mut corpus = String::new();
    for (id, lang, cwe, _, _) in tasks {
        corpus.push_str(
            &json!({
                "task_id": id, "language": lang, "cwe": cwe, "prompt": prompt,
                "functional_oracle": "true", "security_oracle": "true", "scaffold": null
            })
            .to_string(),
        );
        corpus.push('\n');
    }
    fs::write(d.join("tasks.jsonl"), corpus).unwrap();
    fs::write(
        d.join("run.json"),
        json!({
            "corpus": "tasks.jsonl", "output_dir": "out", "seed": 0,
            "models": [{"id": "m", "endpoint": "stub"}],
            "profiles": [{"temperature": 0.0, "n_samples": 1}],
            "mutation": {"kinds": ["SingleChar"]}
        })
        .to_string(),
    )
    .unwrap();

    let paths = LedgerPaths::new(d.join("out/ledger"));
    fs::create_dir_all(paths.profile_dir("m", "T0_n1")).unwrap();
    let tok = WhitespaceTokenizer::fit([prompt]);
    let cfg = PlanConfig {
        kinds: vec![MutationKind::SingleChar],
        ..PlanConfig::default()
    };
    let mut all = Vec::new();
    let mut outcomes = Vec::new();
    for (id, lang, cwe, orig_pass, flips) in tasks {
        let plan = build_plan(&tok.tokenize(id, prompt), None, &cfg).unwrap().records;
        assert_eq!(plan.len(), 30);
        outcomes.push(OutcomeRecord::new("m", id, lang, cwe, 0.0, PromptRef::Original, 0, orig_pass, true));
        for (i, r) in plan.iter().enumerate() {
            let pass = if i < flips { !orig_pass } else { orig_pass };
            outcomes.push(OutcomeRecord::new("m", id, lang, cwe, 0.0, PromptRef::Mutation(r.key()), 0, pass, true));
        }
        all.extend(plan);
    }
    write_mutations(&paths.mutations("m"), &all).unwrap();
    append_jsonl(&paths.outcomes("m", "T0_n1"), outcomes.iter()).unwrap();

    let o = mutaprobe(d, &["analyze", "--config", "run.json", "--tau", "10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv_rows(&d.join("out/analysis/affected_fraction.csv"));
    rdr.retain(|r| r[2] == "func");
    let got: Vec<(String, String, String, f64)> = rdr
        .into_iter()
        .map(|r| (r[1].clone(), r[3].clone(), format!("{}/{}", r[4], r[5]), r[6].parse().unwrap()))
        .collect();
    assert_eq!(
        got,
        vec![
            ("c".into(), "10".into(), "1/2".into(), 0.5),
            ("py".into(), "10".into(), "1/1".into(), 1.0)
        ]
    );
}

fn csv_rows(path: &PathBuf) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn http_endpoint_matches_builtin_stub() {
    let server = StubServer::start(StubBackend::default(), "127.0.0.1:0", 0).unwrap();
    let mut results = Vec::new();
    for endpoint in [None, Some(server.url().to_string())] {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        toy(d);
        edit_config(d, |v| v["profiles"] = json!([{"temperature": 0.0, "n_samples": 1}]));
        for step in ["mutate", "generate", "evaluate"] {
            let mut args = vec![step, "--config", "run.json"];
            if let Some(e) = &endpoint {
                args.extend(["--endpoint", e.as_str()]);
            }
            let o = mutaprobe(d, &args);
            assert_eq!(code(&o), 0, "{step}: {}", stderr(&o));
        }
        let mut rows: Vec<_> = read_jsonl::<OutcomeRecord>(&d.join("out/ledger/stub-a/T0_n1/outcomes.jsonl"))
            .unwrap()
            .into_iter()
            .map(|o| (o.task_id, o.prompt_ref, o.functional, o.secure))
            .collect();
        rows.sort();
        assert_eq!(rows.len(), 455);
        results.push(rows);
    }
    assert_eq!(results[0], results[1]);
}
