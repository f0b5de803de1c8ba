use std::collections::BTreeMap;
use std::fs;
use std::time::Duration;

use mutaprobe_core::analysis::{flip_table, AnalysisOptions, Metric};
use mutaprobe_core::corpus::{Corpus, LanguageId, TaskSpec};
use mutaprobe_core::mutator::{build_plan, EmbeddingTable, MutationRecord, PlanConfig, WhitespaceTokenizer};
use mutaprobe_core::runner::{
    read_jsonl, run_campaign, CampaignOptions, HttpEndpoint, Ledger, LedgerPaths, OutcomeRecord, PromptRef,
    RetryPolicy, SandboxPolicy, StubBackend, StubServer, TemperatureProfile,
};

const PROMPTS: [(&str, LanguageId, &str, &str); 3] = [
    ("c-1", LanguageId::C, "CWE-787", "copy the input buffer"),
    ("c-2", LanguageId::C, "CWE-787", "resize array then write"),
    ("py-1", LanguageId::Py, "CWE-078", "run shell command safely"),
];

fn corpus() -> Corpus {
    Corpus::from_tasks(
        PROMPTS
            .iter()
            .map(|&(id, language, cwe, prompt)| TaskSpec {
                task_id: id.into(),
                language,
                cwe: cwe.into(),
                prompt: prompt.into(),
                functional_oracle: "grep -q FUNCTIONAL {completion_file}".into(),
                security_oracle: "! grep -q INSECURE {completion_file}".into(),
                scaffold: None,
            })
            .collect(),
    )
    .unwrap()
}

fn mutations(corpus: &Corpus) -> Vec<MutationRecord> {
    let tok = WhitespaceTokenizer::fit(corpus.tasks().iter().map(|t| t.prompt.as_str()));
    let table = EmbeddingTable::from_char_trigrams(&tok.vocab(), 16).unwrap();
    let cfg = PlanConfig {
        variants_per_kind: 2,
        ..PlanConfig::default()
    };
    corpus
        .tasks()
        .iter()
        .flat_map(|t| build_plan(&tok.tokenize(&t.task_id, &t.prompt), Some(&table), &cfg).unwrap().records)
        .collect()
}

fn opts(t: f64, n: u32) -> CampaignOptions {
    CampaignOptions {
        workers: 3,
        sandbox: SandboxPolicy {
            timeout_s: 10.0,
            deny_network: false,
            ..SandboxPolicy::default()
        },
        ..CampaignOptions::new("m", TemperatureProfile::new(t, n))
    }
}

type Row = (String, PromptRef, u32, bool, bool);

fn outcomes(paths: &LedgerPaths, label: &str) -> Vec<Row> {
    let mut rows: Vec<Row> = read_jsonl::<OutcomeRecord>(&paths.outcomes("m", label))
        .unwrap()
        .into_iter()
        .map(|o| (o.task_id, o.prompt_ref, o.sample_index, o.functional, o.secure))
        .collect();
    rows.sort();
    rows
}

#[test]
fn http_stub_matches_in_process_stub() {
    let c = corpus();
    let muts = mutations(&c);
    let o = opts(0.8, 2);

    let local = tempfile::tempdir().unwrap();
    let local_paths = LedgerPaths::new(local.path());
    run_campaign(&c, &muts, &StubBackend::default(), &local_paths, &o).unwrap();

    let server = StubServer::start(StubBackend::default(), "127.0.0.1:0", 2).unwrap();
    let retry = RetryPolicy {
        max_attempts: 4,
        base_delay_ms: 1,
        max_delay_ms: 4,
    };
    let http = HttpEndpoint::new(server.url(), Duration::from_secs(10), retry).unwrap();
    let remote = tempfile::tempdir().unwrap();
    let remote_paths = LedgerPaths::new(remote.path());
    let s = run_campaign(&c, &muts, &http, &remote_paths, &o).unwrap();
    assert_eq!(s.generation_failures, 0);
    assert_eq!(s.outcomes_written, 2 * (muts.len() + 3));

    assert_eq!(outcomes(&local_paths, "T0.8_n2"), outcomes(&remote_paths, "T0.8_n2"));
}

#[test]
fn flip_table_agrees_with_direct_count() {
    let c = corpus();
    let muts = mutations(&c);
    let dir = tempfile::tempdir().unwrap();
    let paths = LedgerPaths::new(dir.path());
    fs::create_dir_all(paths.model_dir("m")).unwrap();
    mutaprobe_core::mutator::write_mutations(&paths.mutations("m"), &muts).unwrap();
    let o = opts(0.0, 1);
    run_campaign(&c, &muts, &StubBackend::default(), &paths, &o).unwrap();
    run_campaign(&c, &muts, &StubBackend::default(), &paths, &o).unwrap();

    let ledger = Ledger::load(dir.path()).unwrap();
    ledger.validate(Some(&c)).unwrap();
    let table = flip_table(&ledger, &AnalysisOptions::default()).unwrap();

    let rows = outcomes(&paths, "T0_n1");
    assert_eq!(rows.len(), muts.len() + 3);
    let original: BTreeMap<&str, bool> = rows
        .iter()
        .filter(|r| r.1 == PromptRef::Original)
        .map(|r| (r.0.as_str(), r.3))
        .collect();
    let mut expected: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.1 != PromptRef::Original) {
        let cwe = c.get(&r.0).unwrap().cwe.as_str();
        let e = expected.entry(cwe).or_default();
        e.0 += 1;
        match (original[r.0.as_str()], r.3) {
            (false, true) => e.1 += 1,
            (true, false) => e.2 += 1,
            _ => {}
        }
    }
    for s in table.iter().filter(|s| s.metric == Metric::Func) {
        let e = expected[s.key.cwe.as_str()];
        assert_eq!((s.n_mutations, s.n_improvements, s.n_deteriorations), e, "{}", s.key.cwe);
        assert_eq!(s.n_flips_total, e.1 + e.2);
    }
}
