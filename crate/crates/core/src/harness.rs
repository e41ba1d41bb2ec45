//! Experiment runner.
//!
//! A plan names the queries, retrievers, context sizes and orderings to
//! sweep. Each (retriever, ordering, k, query) cell is rendered, generated
//! and scored; every response is logged to a transcript keyed by a hash of
//! the plan and the cell, so reruns skip finished cells and a replay can
//! rebuild the result table without any backend.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::context::{
    apply_ordering, default_template, fit_to_budget, prompt_overhead, render_prompt, OrderingStrategy, TemplateRegistry,
    TokenBudget,
};
use crate::corpus::{load_queries, CorpusStore, QueryRecord};
use crate::error::{Error, Result};
use crate::generator::{batch_generate, Backend, GenRequest, HttpBackend, HttpConfig, MockBackend, MockSpec, OracleHint};
use crate::hardneg::{build_hardneg, build_randomneg, child_seed, identify_gold, HardNegInstance, NegativeSource};
use crate::metrics::{check_ks, label_relevant, relevance_flags, relevant_in_top, score_answer, RelevanceLabeler, ScoreMode};
use crate::retrieval::{bm25_search, read_ranked_lists, Bm25Params, RankedSet};
use crate::seed::{derive_seed, sha256_hex};

pub const DEFAULT_RETRIEVAL_DEPTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendConfig {
    Mock(MockSpec),
    Http(HttpConfig),
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn Backend>> {
        Ok(match self {
            BackendConfig::Mock(spec) => Box::new(MockBackend::new(spec.clone())),
            BackendConfig::Http(cfg) => Box::new(HttpBackend::new(cfg.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegPlan {
    /// Context sizes K (gold plus K - 1 negatives).
    pub ks: Vec<usize>,
    pub sources: Vec<NegativeSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: String,
    pub queries: PathBuf,
    pub corpus_dir: PathBuf,
    /// RankedList JSONL files. A `bm25` retriever without a file is run
    /// live against the corpus index.
    #[serde(default)]
    pub rankings: Vec<PathBuf>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    pub retrievers: Vec<String>,
    pub ks: Vec<usize>,
    #[serde(default = "default_orderings")]
    pub orderings: Vec<OrderingStrategy>,
    pub backend: BackendConfig,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default)]
    pub score_mode: ScoreMode,
    #[serde(default)]
    pub labeler: RelevanceLabeler,
    /// Overrides the per-task default template.
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub reasoning: bool,
    #[serde(default)]
    pub budget: Option<TokenBudget>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sample_limit: Option<usize>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub retrieval_depth: Option<usize>,
    #[serde(default)]
    pub hardneg: Option<HardNegPlan>,
}

fn default_orderings() -> Vec<OrderingStrategy> {
    vec![OrderingStrategy::Original]
}

fn default_model() -> String {
    "mock".to_string()
}

fn default_parallelism() -> usize {
    1
}

impl ExperimentPlan {
    /// A plan over in-memory inputs; paths are left empty.
    pub fn new(name: impl Into<String>, retrievers: &[&str], ks: &[usize], backend: BackendConfig) -> Self {
        ExperimentPlan {
            name: name.into(),
            queries: PathBuf::new(),
            corpus_dir: PathBuf::new(),
            rankings: Vec::new(),
            templates_dir: None,
            retrievers: retrievers.iter().map(|r| r.to_string()).collect(),
            ks: ks.to_vec(),
            orderings: default_orderings(),
            backend,
            model_id: default_model(),
            score_mode: ScoreMode::default(),
            labeler: RelevanceLabeler::default(),
            template: None,
            reasoning: false,
            budget: None,
            seed: 0,
            sample_limit: None,
            parallelism: 1,
            retrieval_depth: None,
            hardneg: None,
        }
    }

    /// Reads a TOML plan (JSON when the extension is `.json`); relative
    /// paths are resolved against the plan's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: ExperimentPlan = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        };
        if let Some(base) = path.parent() {
            plan.resolve_paths(base);
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.queries);
        fix(&mut self.corpus_dir);
        self.rankings.iter_mut().for_each(fix);
        if let Some(t) = self.templates_dir.as_mut() {
            fix(t);
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_ks(&self.ks)?;
        if self.retrievers.is_empty() {
            return Err(Error::InvalidConfig("plan lists no retrievers".into()));
        }
        if self.orderings.is_empty() {
            return Err(Error::InvalidConfig("plan lists no orderings".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::InvalidConfig("parallelism must be at least 1".into()));
        }
        if self.sample_limit == Some(0) {
            return Err(Error::InvalidConfig("sample_limit must be at least 1".into()));
        }
        if let Some(h) = &self.hardneg {
            check_ks(&h.ks)?;
            if h.sources.is_empty() {
                return Err(Error::InvalidConfig("hardneg section lists no negative sources".into()));
            }
        }
        Ok(())
    }

    /// Hash of everything that changes a generated response.
    pub fn fingerprint(&self) -> String {
        let identity = serde_json::json!({
            "name": self.name,
            "backend": self.backend,
            "model_id": self.model_id,
            "template": self.template,
            "reasoning": self.reasoning,
            "budget": self.budget,
        });
        sha256_hex(identity.to_string().as_bytes())
    }

    fn depth(&self) -> usize {
        let max_k = self.ks.iter().copied().max().unwrap_or(0);
        let max_hn = self.hardneg.as_ref().and_then(|h| h.ks.iter().copied().max()).unwrap_or(0);
        self.retrieval_depth
            .unwrap_or(DEFAULT_RETRIEVAL_DEPTH)
            .max(max_k)
            .max(max_hn)
    }
}

/// Everything a sweep reads.
pub struct SweepInputs {
    pub queries: Vec<QueryRecord>,
    pub corpus: CorpusStore,
    pub ranked: RankedSet,
    pub registry: TemplateRegistry,
}

impl SweepInputs {
    pub fn load(plan: &ExperimentPlan) -> Result<Self> {
        let queries = load_queries(&plan.queries)?;
        let corpus = CorpusStore::load(&plan.corpus_dir)?;
        let mut ranked = RankedSet::new();
        for path in &plan.rankings {
            for list in read_ranked_lists(path)? {
                ranked.insert(list);
            }
        }
        let registry = match &plan.templates_dir {
            Some(dir) => TemplateRegistry::builtin_with_overrides(dir)?,
            None => TemplateRegistry::builtin(),
        };
        let have: Vec<String> = ranked.retrievers().iter().map(|s| s.to_string()).collect();
        if plan.retrievers.iter().any(|r| r == "bm25") && !have.iter().any(|r| r == "bm25") {
            for q in &queries {
                ranked.insert(bm25_search(&corpus, q, plan.depth(), Bm25Params::default())?);
            }
        }
        Ok(SweepInputs {
            queries,
            corpus,
            ranked,
            registry,
        })
    }

    fn selected(&self, plan: &ExperimentPlan) -> &[QueryRecord] {
        let n = plan.sample_limit.unwrap_or(usize::MAX).min(self.queries.len());
        &self.queries[..n]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub query_id: String,
    pub retriever_id: String,
    pub ordering: String,
    pub k: usize,
    pub prompt: String,
    pub response: String,
    pub relevant_positions: Vec<usize>,
}

/// Append-only JSONL log of generations, indexed by cell key.
pub struct Transcript {
    entries: HashMap<String, TranscriptEntry>,
    sink: Option<(PathBuf, BufWriter<File>)>,
}

impl Transcript {
    pub fn in_memory() -> Self {
        Transcript {
            entries: HashMap::new(),
            sink: None,
        }
    }

    /// Loads `path` if it exists and appends new entries to it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut t = if path.exists() { Self::read(path)? } else { Self::in_memory() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        t.sink = Some((path.to_path_buf(), BufWriter::new(file)));
        Ok(t)
    }

    /// Loads `path` without opening it for writing.
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: n + 1,
                reason: e.to_string(),
            })?;
            entries.insert(entry.key.clone(), entry);
        }
        Ok(Transcript { entries, sink: None })
    }

    pub fn get(&self, key: &str) -> Option<&TranscriptEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn record(&mut self, entry: TranscriptEntry) -> Result<()> {
        if let Some((path, out)) = self.sink.as_mut() {
            serde_json::to_writer(&mut *out, &entry)?;
            out.write_all(b"\n").map_err(|e| Error::io(&*path, e))?;
            out.flush().map_err(|e| Error::io(&*path, e))?;
        }
        self.entries.insert(entry.key.clone(), entry);
        Ok(())
    }
}

pub fn transcript_key(fingerprint: &str, query_id: &str, retriever: &str, ordering: &str, k: usize) -> String {
    let mut material = Vec::new();
    for part in [fingerprint, query_id, retriever, ordering] {
        material.extend_from_slice(&(part.len() as u64).to_le_bytes());
        material.extend_from_slice(part.as_bytes());
    }
    material.extend_from_slice(&(k as u64).to_le_bytes());
    sha256_hex(&material)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub plan_name: String,
    pub retriever_id: String,
    pub ordering: String,
    pub k: usize,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub n: usize,
    /// Queries dropped because generation failed.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub retriever_id: String,
    pub ordering: String,
    pub k: usize,
    pub query_id: String,
    pub correct: bool,
    pub relevant_in_context: usize,
    pub prediction: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub per_query: Vec<QueryOutcome>,
    pub failures: usize,
    /// Responses served from the transcript instead of the backend.
    pub reused: usize,
}

struct Job {
    cell: usize,
    query: usize,
    key: String,
    retriever: String,
    ordering: String,
    k: usize,
    request: GenRequest,
    /// Relevant passages in the top k of the ranking (metric side).
    ranked_hits: usize,
}

/// Runs every job not already in the transcript and returns one response
/// per job (`None` when generation failed).
fn resolve_jobs(
    jobs: &[Job],
    queries: &[QueryRecord],
    backend: Option<&dyn Backend>,
    transcript: &mut Transcript,
    parallelism: usize,
) -> Result<(Vec<Option<String>>, usize)> {
    let missing: Vec<usize> = (0..jobs.len()).filter(|&i| transcript.get(&jobs[i].key).is_none()).collect();
    let reused = jobs.len() - missing.len();
    if !missing.is_empty() {
        let backend = backend.ok_or_else(|| Error::MissingTranscriptEntry(jobs[missing[0]].key.clone()))?;
        let requests: Vec<GenRequest> = missing.iter().map(|&i| jobs[i].request.clone()).collect();
        let results = batch_generate(&requests, parallelism, backend);
        for (&i, result) in missing.iter().zip(results) {
            let job = &jobs[i];
            match result {
                Ok(resp) => transcript.record(TranscriptEntry {
                    key: job.key.clone(),
                    query_id: queries[job.query].id.clone(),
                    retriever_id: job.retriever.clone(),
                    ordering: job.ordering.clone(),
                    k: job.k,
                    prompt: job.request.prompt.clone(),
                    response: resp.text,
                    relevant_positions: job.request.hint.as_ref().map(|h| h.relevant_positions.clone()).unwrap_or_default(),
                })?,
                Err(e) => log::warn!("generation failed for query {} ({}): {e}", queries[job.query].id, job.retriever),
            }
        }
    }
    Ok((
        jobs.iter().map(|j| transcript.get(&j.key).map(|e| e.response.clone())).collect(),
        reused,
    ))
}

fn per_query_ordering(strategy: OrderingStrategy, query_id: &str) -> OrderingStrategy {
    match strategy {
        OrderingStrategy::Random { seed } => OrderingStrategy::Random {
            seed: derive_seed(seed, &[query_id.as_bytes()]),
        },
        other => other,
    }
}

fn make_request(
    plan: &ExperimentPlan,
    inputs: &SweepInputs,
    query: &QueryRecord,
    ids: &[String],
    rank_order: &[String],
    ordering: OrderingStrategy,
) -> Result<GenRequest> {
    let template_id = plan
        .template
        .clone()
        .unwrap_or_else(|| default_template(query.task, plan.reasoning).to_string());
    let ids = match plan.budget {
        Some(budget) if !ids.is_empty() => {
            let overhead = prompt_overhead(query, &template_id, &inputs.registry, budget.counter)?;
            fit_to_budget(ids, rank_order, overhead, budget, &inputs.corpus)?
        }
        _ => ids.to_vec(),
    };
    let prompt = render_prompt(query, &ids, &template_id, &inputs.registry, &inputs.corpus, ordering)?;
    let mut relevant_positions = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        if label_relevant(query, inputs.corpus.resolve(id)?, plan.labeler)? {
            relevant_positions.push(i + 1);
        }
    }
    let request = if plan.reasoning {
        GenRequest::reasoning(plan.model_id.clone(), prompt.rendered)
    } else {
        GenRequest::answer(plan.model_id.clone(), prompt.rendered)
    };
    Ok(request.with_hint(OracleHint {
        relevant_positions,
        k: ids.len(),
        answer: query.answers.first().cloned().unwrap_or_default(),
    }))
}

/// Runs the (retriever, ordering, k) grid. With `backend = None` every
/// response must already be in the transcript (offline replay).
pub fn run_sweep(
    plan: &ExperimentPlan,
    inputs: &SweepInputs,
    backend: Option<&dyn Backend>,
    transcript: &mut Transcript,
) -> Result<SweepOutput> {
    plan.validate()?;
    let queries = inputs.selected(plan);
    let fingerprint = plan.fingerprint();
    let mut cells = Vec::new();
    let mut jobs = Vec::new();
    for retriever in &plan.retrievers {
        for &ordering in &plan.orderings {
            let label = ordering.to_string();
            for &k in &plan.ks {
                let cell = cells.len();
                cells.push((retriever.clone(), label.clone(), k));
                for (qi, query) in queries.iter().enumerate() {
                    let ranked = inputs.ranked.get(retriever, &query.id)?;
                    let flags = relevance_flags(ranked, query, &inputs.corpus, plan.labeler)?;
                    let rank_order: Vec<String> = ranked.entries.iter().take(k).map(|e| e.passage_id.clone()).collect();
                    let strategy = per_query_ordering(ordering, &query.id);
                    let ids = apply_ordering(ranked, k, strategy);
                    jobs.push(Job {
                        cell,
                        query: qi,
                        key: transcript_key(&fingerprint, &query.id, retriever, &label, k),
                        retriever: retriever.clone(),
                        ordering: label.clone(),
                        k,
                        request: make_request(plan, inputs, query, &ids, &rank_order, strategy)?,
                        ranked_hits: relevant_in_top(&flags, k),
                    });
                }
            }
        }
    }

    let (responses, reused) = resolve_jobs(&jobs, queries, backend, transcript, plan.parallelism)?;

    #[derive(Default, Clone)]
    struct Tally {
        n: usize,
        correct: usize,
        present: usize,
        hits: usize,
        failures: usize,
    }
    let mut tallies = vec![Tally::default(); cells.len()];
    let mut out = SweepOutput {
        reused,
        ..Default::default()
    };
    for (job, response) in jobs.iter().zip(responses) {
        let t = &mut tallies[job.cell];
        let Some(prediction) = response else {
            t.failures += 1;
            continue;
        };
        let query = &queries[job.query];
        let correct = score_answer(&prediction, query, plan.score_mode);
        t.n += 1;
        t.correct += correct as usize;
        t.present += (job.ranked_hits > 0) as usize;
        t.hits += job.ranked_hits;
        out.per_query.push(QueryOutcome {
            retriever_id: job.retriever.clone(),
            ordering: job.ordering.clone(),
            k: job.k,
            query_id: query.id.clone(),
            correct,
            relevant_in_context: job.request.hint.as_ref().map_or(0, |h| h.relevant_positions.len()),
            prediction,
        });
    }
    for ((retriever, ordering, k), t) in cells.into_iter().zip(tallies) {
        out.failures += t.failures;
        if t.n == 0 {
            log::warn!("no successful generations for {retriever}/{ordering}/k={k}; row omitted");
            continue;
        }
        if t.failures > 0 {
            log::warn!("{retriever}/{ordering}/k={k}: {} of {} generations failed", t.failures, t.n + t.failures);
        }
        let n = t.n as f64;
        out.rows.push(ResultRow {
            plan_name: plan.name.clone(),
            retriever_id: retriever,
            ordering,
            k,
            accuracy: t.correct as f64 / n,
            recall: t.present as f64 / n,
            precision: t.hits as f64 / (k as f64 * n),
            n: t.n,
            failures: t.failures,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardNegRow {
    pub plan_name: String,
    pub negative_source: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub accuracy: f64,
    pub n: usize,
    /// Queries without a usable gold or enough negatives.
    pub skipped: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Default)]
pub struct HardNegOutput {
    pub rows: Vec<HardNegRow>,
    pub instances: Vec<HardNegInstance>,
    pub skipped: usize,
}

/// Accuracy with the gold passage plus `K - 1` negatives from each
/// configured source, rendered in the instance's shuffled order.
pub fn run_hardneg_sweep(
    plan: &ExperimentPlan,
    inputs: &SweepInputs,
    backend: Option<&dyn Backend>,
    transcript: &mut Transcript,
) -> Result<HardNegOutput> {
    plan.validate()?;
    let hn = plan
        .hardneg
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("plan has no hardneg section".into()))?;
    let queries = inputs.selected(plan);
    let fingerprint = plan.fingerprint();
    let mut cells: Vec<(String, usize, usize)> = Vec::new();
    let mut jobs = Vec::new();
    let mut out = HardNegOutput::default();
    for source in &hn.sources {
        let label = source.to_string();
        let gold_retriever = match source {
            NegativeSource::Retriever(id) => id.as_str(),
            NegativeSource::Random => plan.retrievers[0].as_str(),
        };
        for &k in &hn.ks {
            let cell = cells.len();
            let mut skipped = 0;
            for (qi, query) in queries.iter().enumerate() {
                let ranked = inputs.ranked.get(gold_retriever, &query.id)?;
                let seed = child_seed(plan.seed, &query.id, k);
                let built = identify_gold(query, ranked, &inputs.corpus).and_then(|gold| match source {
                    NegativeSource::Retriever(_) => build_hardneg(query, gold, ranked, k, seed, &inputs.corpus),
                    NegativeSource::Random => build_randomneg(query, gold, &inputs.corpus, k, seed),
                });
                let inst = match built {
                    Ok(inst) => inst,
                    Err(e @ (Error::InsufficientNegatives { .. } | Error::NoGold(_) | Error::GoldNotRelevant { .. })) => {
                        log::debug!("skipping {} for {label} K={k}: {e}", query.id);
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let request = make_request(plan, inputs, query, &inst.context_ids, &inst.context_ids, OrderingStrategy::Original)?;
                jobs.push(Job {
                    cell,
                    query: qi,
                    key: transcript_key(&fingerprint, &query.id, &format!("hardneg/{label}"), "original", k),
                    retriever: format!("hardneg/{label}"),
                    ordering: "original".into(),
                    k,
                    request,
                    ranked_hits: 1,
                });
                out.instances.push(inst);
            }
            out.skipped += skipped;
            cells.push((label.clone(), k, skipped));
        }
    }

    let (responses, _) = resolve_jobs(&jobs, queries, backend, transcript, plan.parallelism)?;
    let mut tallies = vec![(0usize, 0usize, 0usize); cells.len()];
    for (job, response) in jobs.iter().zip(responses) {
        let t = &mut tallies[job.cell];
        match response {
            Some(pred) => {
                t.0 += 1;
                t.1 += score_answer(&pred, &queries[job.query], plan.score_mode) as usize;
            }
            None => t.2 += 1,
        }
    }
    for ((source, k, skipped), (n, correct, failures)) in cells.into_iter().zip(tallies) {
        if n == 0 {
            log::warn!("no scored queries for {source} K={k}; row omitted");
            continue;
        }
        out.rows.push(HardNegRow {
            plan_name: plan.name.clone(),
            negative_source: source,
            k,
            accuracy: correct as f64 / n as f64,
            n,
            skipped,
            failures,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingDelta {
    pub plan_name: String,
    pub retriever_id: String,
    pub k: usize,
    pub original: f64,
    pub reordered: f64,
    /// `reordered - original`.
    pub delta: f64,
}

/// Pairs original and reordered rows per (retriever, k).
pub fn compare_orderings(rows: &[ResultRow]) -> Result<Vec<OrderingDelta>> {
    type Key = (String, String, usize);
    let mut pairs: BTreeMap<Key, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in rows {
        let slot = pairs
            .entry((r.plan_name.clone(), r.retriever_id.clone(), r.k))
            .or_default();
        match r.ordering.as_str() {
            "original" => slot.0 = Some(r.accuracy),
            "reordered" => slot.1 = Some(r.accuracy),
            _ => {}
        }
    }
    let deltas: Vec<OrderingDelta> = pairs
        .into_iter()
        .filter_map(|((plan_name, retriever_id, k), pair)| match pair {
            (Some(original), Some(reordered)) => Some(OrderingDelta {
                plan_name,
                retriever_id,
                k,
                original,
                reordered,
                delta: reordered - original,
            }),
            _ => None,
        })
        .collect();
    if deltas.is_empty() {
        return Err(Error::InvalidConfig(
            "ordering comparison needs both original and reordered rows".into(),
        ));
    }
    Ok(deltas)
}

/// Serializes rows as CSV with a header taken from the field names.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;
    use crate::retrieval::{RankedEntry, RankedList};

    /// `n` queries whose single gold passage sits at rank `gold_rank(i)` of
    /// a 40-passage ranking; every other passage is answer-free.
    fn planted(n: usize, gold_rank: impl Fn(usize) -> usize) -> SweepInputs {
        let mut rows = Vec::new();
        let mut queries = Vec::new();
        let mut ranked = RankedSet::new();
        for i in 0..n {
            let rank = gold_rank(i);
            let answer = format!("answer{i}");
            let mut entries = Vec::new();
            for r in 1..=40 {
                let id = format!("q{i}-p{r:02}");
                let text = if r == rank {
                    format!("the gold passage says {answer}")
                } else {
                    format!("filler text number {r}")
                };
                rows.push((id.clone(), format!("T{r}"), text));
                entries.push(RankedEntry {
                    passage_id: id,
                    score: 100.0 - r as f64,
                });
            }
            queries.push(QueryRecord::new(format!("q{i}"), format!("question {i}"), &[&answer], Task::Qa));
            ranked.insert(RankedList {
                query_id: format!("q{i}"),
                retriever_id: "fixed".into(),
                entries,
            });
        }
        SweepInputs {
            queries,
            corpus: CorpusStore::from_triples(rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))).unwrap(),
            ranked,
            registry: TemplateRegistry::builtin(),
        }
    }

    fn oracle(front: usize, back: usize) -> BackendConfig {
        BackendConfig::Mock(MockSpec::oracle_if_relevant(front, back))
    }

    fn sweep(plan: &ExperimentPlan, inputs: &SweepInputs) -> SweepOutput {
        let backend = plan.backend.build().unwrap();
        run_sweep(plan, inputs, Some(backend.as_ref()), &mut Transcript::in_memory()).unwrap()
    }

    #[test]
    fn full_window_accuracy_equals_recall() {
        let inputs = planted(30, |i| i % 12 + 1);
        let plan = ExperimentPlan::new("full", &["fixed"], &[1, 2, 5, 10, 20], oracle(40, 0));
        let out = sweep(&plan, &inputs);
        assert_eq!(out.rows.len(), 5);
        for r in &out.rows {
            assert_eq!(r.accuracy, r.recall, "k={}", r.k);
            assert_eq!(r.n, 30);
        }
    }

    #[test]
    fn always_wrong_and_sample_limit() {
        let inputs = planted(12, |_| 1);
        let mut plan = ExperimentPlan::new("wrong", &["fixed"], &[1, 3], BackendConfig::Mock(MockSpec::always("nothing")));
        plan.sample_limit = Some(5);
        let out = sweep(&plan, &inputs);
        assert!(out.rows.iter().all(|r| r.accuracy == 0.0 && r.n == 5));
    }

    #[test]
    fn planted_rank_two_favours_reordering() {
        let inputs = planted(20, |_| 2);
        let mut plan = ExperimentPlan::new("order", &["fixed"], &[1, 4, 8, 16, 32], oracle(1, 1));
        plan.orderings = vec![OrderingStrategy::Original, OrderingStrategy::Reordered];
        let deltas = compare_orderings(&sweep(&plan, &inputs).rows).unwrap();
        for d in &deltas {
            if d.k == 1 {
                assert_eq!(d.delta, 0.0);
            } else {
                assert_eq!((d.original, d.reordered), (0.0, 1.0), "k={}", d.k);
            }
        }
    }

    #[test]
    fn identical_answers_give_zero_delta() {
        let inputs = planted(10, |i| i % 5 + 1);
        let mut plan = ExperimentPlan::new("echo", &["fixed"], &[2, 6], BackendConfig::Mock(MockSpec::new(crate::generator::MockKind::EchoGold)));
        plan.orderings = vec![OrderingStrategy::Original, OrderingStrategy::Reordered];
        assert!(compare_orderings(&sweep(&plan, &inputs).rows).unwrap().iter().all(|d| d.delta == 0.0));
        plan.orderings = vec![OrderingStrategy::Original];
        assert!(compare_orderings(&sweep(&plan, &inputs).rows).is_err());
    }

    #[test]
    fn transcript_resume_and_offline_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let inputs = planted(8, |i| i % 4 + 1);
        let mut plan = ExperimentPlan::new("resume", &["fixed"], &[2, 4], oracle(1, 1));
        plan.orderings = vec![OrderingStrategy::Original, OrderingStrategy::Reordered, OrderingStrategy::Random { seed: 3 }];
        let backend = plan.backend.build().unwrap();
        let first = run_sweep(&plan, &inputs, Some(backend.as_ref()), &mut Transcript::open(&path).unwrap()).unwrap();
        assert_eq!(first.reused, 0);
        let again = run_sweep(&plan, &inputs, Some(backend.as_ref()), &mut Transcript::open(&path).unwrap()).unwrap();
        assert_eq!(again.reused, 8 * 2 * 3);
        let replay = run_sweep(&plan, &inputs, None, &mut Transcript::read(&path).unwrap()).unwrap();
        assert_eq!(first.rows, replay.rows);

        let mut bigger = plan.clone();
        bigger.ks = vec![2, 4, 8];
        assert!(matches!(
            run_sweep(&bigger, &inputs, None, &mut Transcript::read(&path).unwrap()),
            Err(Error::MissingTranscriptEntry(_))
        ));
    }

    #[test]
    fn rows_ignore_query_order() {
        let inputs = planted(15, |i| i % 7 + 1);
        let mut reversed = planted(15, |i| i % 7 + 1);
        reversed.queries.reverse();
        let mut plan = ExperimentPlan::new("perm", &["fixed"], &[1, 3, 7], oracle(1, 1));
        plan.orderings = vec![OrderingStrategy::Original, OrderingStrategy::Reordered];
        assert_eq!(sweep(&plan, &inputs).rows, sweep(&plan, &reversed).rows);
    }

    struct Failing;
    impl Backend for Failing {
        fn generate(&self, req: &GenRequest) -> Result<crate::generator::GenResponse> {
            if req.prompt.contains("question 3.") {
                Err(Error::Timeout)
            } else {
                MockBackend::new(MockSpec::always("x")).generate(req)
            }
        }
    }

    #[test]
    fn failures_reduce_n() {
        let inputs = planted(6, |_| 1);
        let plan = ExperimentPlan::new("fail", &["fixed"], &[2], oracle(1, 1));
        let out = run_sweep(&plan, &inputs, Some(&Failing), &mut Transcript::in_memory()).unwrap();
        assert_eq!(out.rows[0].n, 5);
        assert_eq!(out.rows[0].failures, 1);
    }

    #[test]
    fn hardneg_single_passage_is_gold() {
        let inputs = planted(10, |i| i % 3 + 1);
        let mut plan = ExperimentPlan::new("hn", &["fixed"], &[1], oracle(1, 1));
        plan.hardneg = Some(HardNegPlan {
            ks: vec![1, 5, 20],
            sources: vec![NegativeSource::Retriever("fixed".into()), NegativeSource::Random],
        });
        let backend = plan.backend.build().unwrap();
        let out = run_hardneg_sweep(&plan, &inputs, Some(backend.as_ref()), &mut Transcript::in_memory()).unwrap();
        assert_eq!(out.rows.len(), 6);
        for r in out.rows.iter().filter(|r| r.k == 1) {
            assert_eq!(r.accuracy, 1.0);
        }
        let again = run_hardneg_sweep(&plan, &inputs, Some(backend.as_ref()), &mut Transcript::in_memory()).unwrap();
        assert_eq!(out.rows, again.rows);
    }

    #[test]
    fn plan_parses_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.toml");
        fs::write(
            &path,
            r#"
name = "demo"
queries = "queries.jsonl"
corpus_dir = "store"
retrievers = ["bm25"]
ks = [1, 5]
orderings = ["original", "reordered", "random(4)"]
score_mode = "exact_match"
sample_limit = 5

[backend.mock]
kind = "oracle_if_relevant"
window_front = 1
window_back = 1

[hardneg]
ks = [1, 5]
sources = ["retriever(bm25)", "random"]
"#,
        )
        .unwrap();
        let plan = ExperimentPlan::load(&path).unwrap();
        assert_eq!(plan.queries, dir.path().join("queries.jsonl"));
        assert_eq!(plan.orderings[2], OrderingStrategy::Random { seed: 4 });
        assert_eq!(plan.backend, oracle(1, 1));
        assert_eq!(plan.score_mode, ScoreMode::ExactMatch);

        fs::write(&path, "name = \"x\"\nqueries = \"q\"\ncorpus_dir = \"c\"\nretrievers = []\nks = [1]\n[backend.mock]\nkind = \"echo_gold\"\n").unwrap();
        assert!(matches!(ExperimentPlan::load(&path), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn results_csv_round_trip() {
        let inputs = planted(5, |_| 2);
        let plan = ExperimentPlan::new("csv", &["fixed"], &[1, 2, 3], oracle(1, 1));
        let rows = sweep(&plan, &inputs).rows;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(File::create(&path).unwrap(), &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("plan_name,retriever_id,ordering,k,accuracy,recall,precision,n,failures\n"));
        assert_eq!(read_results_csv(&path).unwrap(), rows);
    }
}
