use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};

use super::endpoint::{complete, CompletionBackend, FinishReason, GenerationRequest, GenerationResult};
use super::ledger::{
    append_jsonl, read_jsonl, sanitize, GenerationRecord, LedgerPaths, OracleLogRefs, OutcomeRecord,
    PromptRef, RequestRecord,
};
use super::oracle::{run_one, OracleRun, SandboxPolicy};
use super::RunnerError;
use crate::corpus::{Corpus, TaskSpec};
use crate::mutator::{fnv1a_64, MutationRecord};

const FLUSH_EVERY: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureProfile {
    pub temperature: f64,
    pub n_samples: u32,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
}

fn default_max_new_tokens() -> u32 {
    1024
}

impl TemperatureProfile {
    pub fn new(temperature: f64, n_samples: u32) -> Self {
        Self {
            temperature,
            n_samples,
            max_new_tokens: default_max_new_tokens(),
        }
    }

    /// Directory name, e.g. `T0_n1` or `T0.8_n10`.
    pub fn label(&self) -> String {
        format!("T{}_n{}", self.temperature, self.n_samples)
    }
}

/// One prompt to send: a task's original prompt or one mutation of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignItem {
    pub task_id: String,
    pub prompt_ref: PromptRef,
    pub prompt: String,
}

impl CampaignItem {
    /// Per task in corpus order: the original, then its mutations in the
    /// order given.
    pub fn collect(corpus: &Corpus, mutations: &[MutationRecord]) -> Vec<CampaignItem> {
        let mut by_task: BTreeMap<&str, Vec<&MutationRecord>> = BTreeMap::new();
        for m in mutations {
            by_task.entry(m.task_id.as_str()).or_default().push(m);
        }
        let mut out = Vec::new();
        for t in corpus.tasks() {
            out.push(CampaignItem {
                task_id: t.task_id.clone(),
                prompt_ref: PromptRef::Original,
                prompt: t.prompt.clone(),
            });
            for m in by_task.get(t.task_id.as_str()).into_iter().flatten() {
                out.push(CampaignItem {
                    task_id: m.task_id.clone(),
                    prompt_ref: PromptRef::Mutation(m.key()),
                    prompt: m.mutated_prompt.clone(),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CampaignOptions {
    pub model_id: String,
    pub profile: TemperatureProfile,
    pub workers: usize,
    /// Mixed into every request seed.
    pub seed: u64,
    pub sandbox: SandboxPolicy,
}

impl CampaignOptions {
    pub fn new(model_id: &str, profile: TemperatureProfile) -> Self {
        Self {
            model_id: model_id.into(),
            profile,
            workers: 4,
            seed: 0,
            sandbox: SandboxPolicy::default(),
        }
    }

    fn request_seed(&self, item: &CampaignItem) -> u64 {
        let key = format!("{}|{}|{}", self.seed, self.model_id, item.prompt_ref.prompt_key(&item.task_id));
        fnv1a_64(key.as_bytes())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CampaignSummary {
    pub requests_sent: usize,
    pub generations_written: usize,
    pub generation_failures: usize,
    pub outcomes_written: usize,
    pub oracle_timeouts: usize,
    /// T=0 requests whose samples did not all share one completion text.
    pub greedy_text_anomalies: usize,
}

impl CampaignSummary {
    fn absorb(&mut self, o: &CampaignSummary) {
        self.requests_sent += o.requests_sent;
        self.generations_written += o.generations_written;
        self.generation_failures += o.generation_failures;
        self.outcomes_written += o.outcomes_written;
        self.oracle_timeouts += o.oracle_timeouts;
        self.greedy_text_anomalies += o.greedy_text_anomalies;
    }
}

/// Runs `work` over `items` on a bounded pool and hands results to `sink`
/// strictly in item order. The first sink error stops the pool.
fn run_ordered<T, R, W, S>(items: &[T], workers: usize, work: W, mut sink: S) -> Result<(), RunnerError>
where
    T: Sync,
    R: Send,
    W: Fn(&T) -> R + Sync,
    S: FnMut(R) -> Result<(), RunnerError>,
{
    if items.is_empty() {
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let workers = workers.clamp(1, items.len());
    thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<(usize, R)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop, work) = (&next, &stop, &work);
            s.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                if tx.send((i, work(&items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut expected = 0;
        let mut result = Ok(());
        for (i, r) in rx {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&expected) {
                expected += 1;
                if result.is_ok() {
                    if let Err(e) = sink(r) {
                        stop.store(true, Ordering::SeqCst);
                        result = Err(e);
                    }
                }
            }
        }
        result
    })
}

type SampleKey = (String, PromptRef, u32);

/// Sends every item whose samples are not all in `generations.jsonl` yet.
/// Failed cells are written with `error` set and retried on the next run;
/// an unknown model or an unreachable endpoint stops the campaign.
pub fn generate(
    backend: &dyn CompletionBackend,
    paths: &LedgerPaths,
    items: &[CampaignItem],
    opts: &CampaignOptions,
) -> Result<CampaignSummary, RunnerError> {
    let label = opts.profile.label();
    let gen_path = paths.generations(&opts.model_id, &label);
    let req_path = paths.requests(&opts.model_id, &label);
    let done: HashSet<SampleKey> = read_jsonl::<GenerationRecord>(&gen_path)?
        .into_iter()
        .filter(|g| g.error.is_none())
        .map(|g| (g.task_id, g.prompt_ref, g.sample_index))
        .collect();

    let todo: Vec<(&CampaignItem, Vec<u32>)> = items
        .iter()
        .filter_map(|it| {
            let missing: Vec<u32> = (0..opts.profile.n_samples)
                .filter(|&s| !done.contains(&(it.task_id.clone(), it.prompt_ref, s)))
                .collect();
            (!missing.is_empty()).then_some((it, missing))
        })
        .collect();

    let mut summary = CampaignSummary::default();
    let mut req_buf: Vec<RequestRecord> = Vec::new();
    let mut gen_buf: Vec<GenerationRecord> = Vec::new();
    let flush = |req_buf: &mut Vec<RequestRecord>, gen_buf: &mut Vec<GenerationRecord>| {
        append_jsonl(&req_path, req_buf.iter())?;
        append_jsonl(&gen_path, gen_buf.iter())?;
        req_buf.clear();
        gen_buf.clear();
        Ok::<(), RunnerError>(())
    };

    let work = |(item, _): &(&CampaignItem, Vec<u32>)| {
        let req = GenerationRequest {
            model_id: opts.model_id.clone(),
            prompt: item.prompt.clone(),
            temperature: opts.profile.temperature,
            n_samples: opts.profile.n_samples,
            max_new_tokens: opts.profile.max_new_tokens,
            request_seed: Some(opts.request_seed(item)),
        };
        let out = complete(backend, &req);
        (req, out)
    };

    let mut index = 0;
    let sink = |(req, out): (GenerationRequest, Result<Vec<GenerationResult>, RunnerError>)| {
        let (item, missing) = &todo[index];
        index += 1;
        summary.requests_sent += 1;
        req_buf.push(RequestRecord {
            model_id: req.model_id.clone(),
            task_id: item.task_id.clone(),
            prompt_ref: item.prompt_ref,
            temperature: req.temperature,
            n_samples: req.n_samples,
            max_new_tokens: req.max_new_tokens,
            request_seed: req.request_seed,
        });
        let record = |sample_index, text: String, finish_reason, latency_ms, error| GenerationRecord {
            model_id: req.model_id.clone(),
            task_id: item.task_id.clone(),
            prompt_ref: item.prompt_ref,
            temperature: req.temperature,
            sample_index,
            completion_text: text,
            finish_reason,
            latency_ms,
            error,
        };
        match out {
            Ok(results) => {
                if req.temperature == 0.0
                    && results.iter().any(|r| r.completion_text != results[0].completion_text)
                {
                    summary.greedy_text_anomalies += 1;
                }
                for r in results.into_iter().filter(|r| missing.contains(&r.sample_index)) {
                    gen_buf.push(record(r.sample_index, r.completion_text, r.finish_reason, r.latency_ms, None));
                    summary.generations_written += 1;
                }
            }
            Err(e @ (RunnerError::ModelUnknown(_) | RunnerError::EndpointUnreachable { .. })) => {
                return Err(e);
            }
            Err(e) => {
                tracing::warn!(task = %item.task_id, prompt = %item.prompt_ref, error = %e, "generation failed");
                summary.generation_failures += 1;
                for &s in missing {
                    gen_buf.push(record(s, String::new(), FinishReason::Error, 0, Some(e.to_string())));
                }
            }
        }
        if gen_buf.len() >= FLUSH_EVERY {
            flush(&mut req_buf, &mut gen_buf)?;
        }
        Ok(())
    };
    let result = run_ordered(&todo, opts.workers, work, sink);
    flush(&mut req_buf, &mut gen_buf)?;
    result.map(|_| summary)
}

struct Judged {
    outcome: OutcomeRecord,
}

fn log_rel_path(g: &GenerationRecord, which: &str) -> String {
    format!(
        "oracle_logs/{}/{}.s{}.{which}.log",
        sanitize(&g.task_id),
        sanitize(&g.prompt_ref.to_string()),
        g.sample_index
    )
}

fn write_log(profile_dir: &Path, rel: &str, run: &OracleRun, command: &str) -> Result<(), RunnerError> {
    let path = profile_dir.join(rel);
    let io_err = |source| RunnerError::Io {
        path: path.clone(),
        source,
    };
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(io_err)?;
    }
    fs::write(&path, run.log_text(command)).map_err(io_err)
}

fn judge(
    task: &TaskSpec,
    g: &GenerationRecord,
    profile_dir: &Path,
    policy: &SandboxPolicy,
) -> Result<Judged, RunnerError> {
    let (func, func_cmd) = run_one(task, &task.functional_oracle, &g.completion_text, policy)?;
    let (sec, sec_cmd) = run_one(task, &task.security_oracle, &g.completion_text, policy)?;
    let logs = OracleLogRefs {
        functional: log_rel_path(g, "functional"),
        security: log_rel_path(g, "security"),
    };
    write_log(profile_dir, &logs.functional, &func, &func_cmd)?;
    write_log(profile_dir, &logs.security, &sec, &sec_cmd)?;
    let mut outcome = OutcomeRecord::new(
        &g.model_id,
        &g.task_id,
        task.language,
        &task.cwe,
        g.temperature,
        g.prompt_ref,
        g.sample_index,
        func.passed,
        sec.passed,
    );
    outcome.finish_reason = g.finish_reason;
    outcome.functional_timed_out = func.timed_out;
    outcome.security_timed_out = sec.timed_out;
    outcome.oracle_logs = logs;
    Ok(Judged { outcome })
}

/// Runs both oracles on every successful generation that has no outcome
/// yet and appends the labelled outcomes.
pub fn evaluate_generations(
    corpus: &Corpus,
    paths: &LedgerPaths,
    opts: &CampaignOptions,
) -> Result<CampaignSummary, RunnerError> {
    let label = opts.profile.label();
    let profile_dir = paths.profile_dir(&opts.model_id, &label);
    let out_path = paths.outcomes(&opts.model_id, &label);
    let mut judged: HashSet<SampleKey> = read_jsonl::<OutcomeRecord>(&out_path)?
        .into_iter()
        .map(|o| (o.task_id, o.prompt_ref, o.sample_index))
        .collect();

    let mut todo: Vec<(&TaskSpec, GenerationRecord)> = Vec::new();
    for g in read_jsonl::<GenerationRecord>(&paths.generations(&opts.model_id, &label))? {
        if g.error.is_some() || g.model_id != opts.model_id {
            continue;
        }
        if !judged.insert((g.task_id.clone(), g.prompt_ref, g.sample_index)) {
            continue;
        }
        let task = corpus
            .get(&g.task_id)
            .ok_or_else(|| RunnerError::Inconsistent(format!("generation for unknown task `{}`", g.task_id)))?;
        todo.push((task, g));
    }

    let mut summary = CampaignSummary::default();
    let mut buf: Vec<OutcomeRecord> = Vec::new();
    let work = |(task, g): &(&TaskSpec, GenerationRecord)| judge(task, g, &profile_dir, &opts.sandbox);
    let sink = |r: Result<Judged, RunnerError>| {
        let j = r?;
        summary.outcomes_written += 1;
        if j.outcome.functional_timed_out || j.outcome.security_timed_out {
            summary.oracle_timeouts += 1;
        }
        buf.push(j.outcome);
        if buf.len() >= FLUSH_EVERY {
            append_jsonl(&out_path, buf.iter())?;
            buf.clear();
        }
        Ok(())
    };
    let result = run_ordered(&todo, opts.workers, work, sink);
    append_jsonl(&out_path, buf.iter())?;
    result.map(|_| summary)
}

/// Generation followed by evaluation; safe to rerun after interruption.
pub fn run_campaign(
    corpus: &Corpus,
    mutations: &[MutationRecord],
    backend: &dyn CompletionBackend,
    paths: &LedgerPaths,
    opts: &CampaignOptions,
) -> Result<CampaignSummary, RunnerError> {
    let items = CampaignItem::collect(corpus, mutations);
    let mut summary = generate(backend, paths, &items, opts)?;
    summary.absorb(&evaluate_generations(corpus, paths, opts)?);
    Ok(summary)
}
