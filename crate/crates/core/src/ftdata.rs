//! Fine-tuning datasets for RAG.
//!
//! Samples are trainer-agnostic JSONL records
//! `{"input", "output", "meta": {...}}`. Implicit samples map the prompt to
//! the answer label; reasoning samples map a reasoning-variant prompt to a
//! reasoning paragraph followed by the answer. Chat-template application is
//! left to the trainer.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::{apply_ordering, option_letter, render_labeler_prompt, render_prompt, OrderingStrategy, TemplateRegistry};
use crate::corpus::{CorpusStore, QueryRecord, Task};
use crate::error::{Error, Result};
use crate::generator::{batch_generate, Backend, GenRequest};
use crate::metrics::normalize_answer;
use crate::retrieval::{RankedList, RankedSet};
use crate::seed::{derive_seed, rng};

pub const DEFAULT_MAX_PASSAGES: usize = 40;
/// Per-source sample count used when none is configured.
pub const DEFAULT_PER_SOURCE: usize = 125;
/// Width of the k buckets in the mix manifest.
pub const K_BUCKET_WIDTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Source {
    Nq,
    Wow,
    Fever,
    Mmlu,
    External(String),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Nq => f.write_str("nq"),
            Source::Wow => f.write_str("wow"),
            Source::Fever => f.write_str("fever"),
            Source::Mmlu => f.write_str("mmlu"),
            Source::External(tag) => write!(f, "external:{tag}"),
        }
    }
}

impl FromStr for Source {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "nq" => Source::Nq,
            "wow" => Source::Wow,
            "fever" => Source::Fever,
            "mmlu" => Source::Mmlu,
            _ => match s.strip_prefix("external:") {
                Some(tag) if !tag.is_empty() => Source::External(tag.to_string()),
                _ => return Err(format!("unknown source {s:?} (nq, wow, fever, mmlu, external:<tag>)")),
            },
        })
    }
}

impl TryFrom<String> for Source {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Source> for String {
    fn from(s: Source) -> String {
        s.to_string()
    }
}

impl Source {
    /// Training template; reasoning variants carry a `_reasoning` suffix.
    pub fn template_id(&self, reasoning: bool) -> Result<String> {
        let base = self.builtin_name()?;
        Ok(if reasoning { format!("{base}_reasoning") } else { base.to_string() })
    }

    /// Prompt used to obtain reasoning labels.
    pub fn labeler_template_id(&self) -> Result<String> {
        Ok(format!("label_{}", self.builtin_name()?))
    }

    fn builtin_name(&self) -> Result<&'static str> {
        match self {
            Source::Nq => Ok("nq"),
            Source::Wow => Ok("wow"),
            Source::Fever => Ok("fever"),
            Source::Mmlu => Ok("mmlu"),
            Source::External(tag) => Err(Error::InvalidConfig(format!(
                "external source {tag:?} has no RAG template"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtMeta {
    pub source: Source,
    pub retriever_id: String,
    pub k_used: usize,
    pub has_reasoning: bool,
    pub query_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtSample {
    pub input: String,
    pub output: String,
    pub meta: FtMeta,
}

/// The training label: the option letter for multiple choice, otherwise the
/// first answer string.
pub fn target_label(query: &QueryRecord) -> Result<String> {
    let first = query
        .answers
        .first()
        .ok_or_else(|| Error::EmptyAnswers(query.id.clone()))?;
    if query.task == Task::Multichoice {
        if let Some(choices) = &query.choices {
            let wanted = normalize_answer(first);
            if let Some(i) = choices.iter().position(|c| normalize_answer(c) == wanted) {
                return Ok(option_letter(i).to_string());
            }
            let letter = first.trim().to_ascii_uppercase();
            if letter.len() == 1 && (0..choices.len()).any(|i| option_letter(i).to_string() == letter) {
                return Ok(letter);
            }
        }
    }
    Ok(first.clone())
}

fn top_k_ids(ranked: &RankedList, k: usize) -> Vec<String> {
    apply_ordering(ranked, k, OrderingStrategy::Original)
}

/// Prompt over the top-`k` passages in retrieval order mapped to the label.
/// `k = 0` gives a closed-book sample.
pub fn build_implicit(
    query: &QueryRecord,
    ranked: &RankedList,
    k: usize,
    template_id: &str,
    registry: &TemplateRegistry,
    corpus: &CorpusStore,
    source: &Source,
) -> Result<FtSample> {
    let ids = top_k_ids(ranked, k);
    let prompt = render_prompt(query, &ids, template_id, registry, corpus, OrderingStrategy::Original)?;
    Ok(FtSample {
        input: prompt.rendered,
        output: target_label(query)?,
        meta: FtMeta {
            source: source.clone(),
            retriever_id: ranked.retriever_id.clone(),
            k_used: ids.len(),
            has_reasoning: false,
            query_id: query.id.clone(),
        },
    })
}

/// Endpoint (or replay cache) that writes reasoning labels.
pub struct Labeler<'a> {
    pub backend: &'a dyn Backend,
    pub model_id: String,
    pub parallelism: usize,
}

/// Reasoning paragraph and answer, separated by a newline.
pub fn compose_reasoning_target(reasoning: &str, answer: &str) -> String {
    format!("{}\n{answer}", reasoning.trim_end())
}

struct ReasoningJob {
    sample: FtSample,
    labeler_prompt: String,
}

#[allow(clippy::too_many_arguments)]
fn reasoning_job(
    query: &QueryRecord,
    ranked: &RankedList,
    k: usize,
    template_id: &str,
    labeler_template_id: &str,
    registry: &TemplateRegistry,
    corpus: &CorpusStore,
    source: &Source,
) -> Result<ReasoningJob> {
    let mut sample = build_implicit(query, ranked, k, template_id, registry, corpus, source)?;
    sample.meta.has_reasoning = true;
    let ids = top_k_ids(ranked, k);
    let labeler_prompt = render_labeler_prompt(query, &ids, labeler_template_id, registry, corpus)?;
    Ok(ReasoningJob { sample, labeler_prompt })
}

fn finish_reasoning(mut job: ReasoningJob, reasoning: &str) -> Result<FtSample> {
    if reasoning.trim().is_empty() {
        return Err(Error::EmptyReasoning(job.sample.meta.query_id.clone()));
    }
    job.sample.output = compose_reasoning_target(reasoning, &job.sample.output);
    Ok(job.sample)
}

/// Reasoning-augmented sample. The labeler sees the gold answers and is
/// asked which passages support them.
#[allow(clippy::too_many_arguments)]
pub fn build_reasoning(
    query: &QueryRecord,
    ranked: &RankedList,
    k: usize,
    template_id: &str,
    labeler_template_id: &str,
    registry: &TemplateRegistry,
    corpus: &CorpusStore,
    source: &Source,
    labeler: &Labeler<'_>,
) -> Result<FtSample> {
    let job = reasoning_job(query, ranked, k, template_id, labeler_template_id, registry, corpus, source)?;
    let resp = labeler
        .backend
        .generate(&GenRequest::reasoning(labeler.model_id.clone(), job.labeler_prompt.clone()))?;
    finish_reasoning(job, &resp.text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverPolicy {
    Single(String),
    Mixed(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KPolicy {
    Fixed(usize),
    Dynamic { lo: usize, hi: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixConfig {
    pub per_source_counts: BTreeMap<Source, usize>,
    pub retriever_policy: RetrieverPolicy,
    pub k_policy: KPolicy,
    #[serde(default)]
    pub seed: u64,
    pub total: usize,
    #[serde(default = "default_max_passages")]
    pub max_passages: usize,
    #[serde(default)]
    pub reasoning: bool,
}

fn default_max_passages() -> usize {
    DEFAULT_MAX_PASSAGES
}

impl MixConfig {
    /// `per_source` samples from each listed source.
    pub fn uniform(sources: &[Source], per_source: usize, retriever_policy: RetrieverPolicy, k_policy: KPolicy, seed: u64) -> Self {
        MixConfig {
            per_source_counts: sources.iter().map(|s| (s.clone(), per_source)).collect(),
            retriever_policy,
            k_policy,
            seed,
            total: per_source * sources.len(),
            max_passages: DEFAULT_MAX_PASSAGES,
            reasoning: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: usize = self.per_source_counts.values().sum();
        if sum != self.total {
            return Err(Error::InvalidConfig(format!(
                "per-source counts sum to {sum}, total is {}",
                self.total
            )));
        }
        match self.k_policy {
            KPolicy::Fixed(k) if k > self.max_passages => {
                return Err(Error::InvalidConfig(format!("k {k} exceeds max passages {}", self.max_passages)));
            }
            KPolicy::Dynamic { lo, hi } if lo > hi || hi > self.max_passages => {
                return Err(Error::InvalidConfig(format!(
                    "dynamic k needs lo <= hi <= {}, got ({lo}, {hi})",
                    self.max_passages
                )));
            }
            _ => {}
        }
        if let RetrieverPolicy::Mixed(ids) = &self.retriever_policy {
            if ids.is_empty() {
                return Err(Error::InvalidConfig("mixed retriever policy lists no retrievers".into()));
            }
        }
        Ok(())
    }

    fn retrievers(&self) -> Vec<&str> {
        match &self.retriever_policy {
            RetrieverPolicy::Single(id) => vec![id.as_str()],
            RetrieverPolicy::Mixed(ids) => ids.iter().map(String::as_str).collect(),
        }
    }
}

/// Seed that orders the query pool of `source`.
pub fn pool_seed(master: u64, source: &Source) -> u64 {
    derive_seed(master, &[b"pool", source.to_string().as_bytes()])
}

fn sample_k(config: &MixConfig, source: &Source, index: usize) -> usize {
    match config.k_policy {
        KPolicy::Fixed(k) => k,
        KPolicy::Dynamic { lo, hi } => {
            let seed = derive_seed(config.seed, &[b"k", source.to_string().as_bytes(), &(index as u64).to_le_bytes()]);
            rng(seed).random_range(lo..=hi)
        }
    }
}

fn k_bucket(k: usize) -> String {
    let lo = k / K_BUCKET_WIDTH * K_BUCKET_WIDTH;
    format!("{lo}-{}", lo + K_BUCKET_WIDTH - 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCount {
    pub source: Source,
    pub retriever_id: String,
    pub k_bucket: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixManifest {
    pub config: MixConfig,
    pub pool_seeds: BTreeMap<Source, u64>,
    pub samples: usize,
    pub counts: Vec<BucketCount>,
    /// Queries dropped because the labeler returned no reasoning.
    pub skipped_empty_reasoning: usize,
}

impl MixManifest {
    /// Total samples per retriever id.
    pub fn retriever_totals(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for c in &self.counts {
            *out.entry(c.retriever_id.clone()).or_insert(0) += c.count;
        }
        out
    }
}

/// Samples each source's pool without replacement under a seeded shuffle
/// that does not depend on the requested count, so a smaller mix is a
/// per-source prefix of a larger one with the same seed. Mixed retrievers
/// rotate per sample, starting at an offset given by the source's position.
pub fn build_mix(
    config: &MixConfig,
    pools: &BTreeMap<Source, Vec<QueryRecord>>,
    ranked: &RankedSet,
    registry: &TemplateRegistry,
    corpus: &CorpusStore,
    labeler: Option<&Labeler<'_>>,
) -> Result<(Vec<FtSample>, MixManifest)> {
    config.validate()?;
    if config.reasoning && labeler.is_none() {
        return Err(Error::LabelerUnavailable("reasoning mix requested without a labeler".into()));
    }
    let retrievers = config.retrievers();
    let mut pool_seeds = BTreeMap::new();
    let mut planned: Vec<(Source, &QueryRecord, &RankedList, usize)> = Vec::with_capacity(config.total);
    for (offset, (source, &count)) in config.per_source_counts.iter().enumerate() {
        let pool = pools.get(source).map(Vec::as_slice).unwrap_or_default();
        if pool.len() < count {
            return Err(Error::PoolExhausted(source.to_string()));
        }
        let seed = pool_seed(config.seed, source);
        pool_seeds.insert(source.clone(), seed);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng(seed));
        for (i, &qi) in order.iter().take(count).enumerate() {
            let query = &pool[qi];
            let retriever = retrievers[(i + offset) % retrievers.len()];
            let list = ranked.get(retriever, &query.id)?;
            planned.push((source.clone(), query, list, sample_k(config, source, i)));
        }
    }

    let mut samples = Vec::with_capacity(planned.len());
    let mut skipped = 0;
    if config.reasoning {
        let labeler = labeler.expect("checked above");
        let mut jobs = Vec::with_capacity(planned.len());
        for (source, query, list, k) in &planned {
            jobs.push(reasoning_job(
                query,
                list,
                *k,
                &source.template_id(true)?,
                &source.labeler_template_id()?,
                registry,
                corpus,
                source,
            )?);
        }
        let requests: Vec<GenRequest> = jobs
            .iter()
            .map(|j| GenRequest::reasoning(labeler.model_id.clone(), j.labeler_prompt.clone()))
            .collect();
        let responses = batch_generate(&requests, labeler.parallelism, labeler.backend);
        for (job, resp) in jobs.into_iter().zip(responses) {
            match finish_reasoning(job, &resp?.text) {
                Ok(s) => samples.push(s),
                Err(Error::EmptyReasoning(q)) => {
                    log::warn!("skipping query {q}: empty reasoning");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
    } else {
        for (source, query, list, k) in &planned {
            samples.push(build_implicit(query, list, *k, &source.template_id(false)?, registry, corpus, source)?);
        }
    }

    let mut buckets: BTreeMap<(Source, String, usize), usize> = BTreeMap::new();
    for s in &samples {
        *buckets
            .entry((s.meta.source.clone(), s.meta.retriever_id.clone(), s.meta.k_used / K_BUCKET_WIDTH))
            .or_insert(0) += 1;
    }
    let counts = buckets
        .into_iter()
        .map(|((source, retriever_id, b), count)| BucketCount {
            source,
            retriever_id,
            k_bucket: k_bucket(b * K_BUCKET_WIDTH),
            count,
        })
        .collect();
    let manifest = MixManifest {
        config: config.clone(),
        pool_seeds,
        samples: samples.len(),
        counts,
        skipped_empty_reasoning: skipped,
    };
    Ok((samples, manifest))
}

#[derive(Deserialize)]
struct ExternalLine {
    input: String,
    output: String,
}

/// Generic instruction pairs tagged as `external:<tag>`.
pub fn read_external(path: &Path, tag: &str) -> Result<Vec<FtSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let source = Source::External(tag.to_string());
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ExternalLine = serde_json::from_str(&line).map_err(|e| Error::MalformedExternalLine {
            path: path.to_path_buf(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        out.push(FtSample {
            input: parsed.input,
            output: parsed.output,
            meta: FtMeta {
                source: source.clone(),
                retriever_id: String::new(),
                k_used: 0,
                has_reasoning: false,
                query_id: format!("{tag}:{}", n + 1),
            },
        });
    }
    Ok(out)
}

/// Interleaves `external` and `rag` at `ratio = (external, rag)`. As many
/// whole ratio units as both inputs allow are used, each stream keeps its
/// relative order, and the merge is a seeded uniform interleaving.
pub fn mix_external_sft(rag: &[FtSample], external: &[FtSample], ratio: (usize, usize), seed: u64) -> Result<Vec<FtSample>> {
    let (ext_w, rag_w) = ratio;
    if ext_w == 0 && rag_w == 0 {
        return Err(Error::InvalidConfig("ratio 0:0".into()));
    }
    if ext_w == 0 {
        return Ok(rag.to_vec());
    }
    if rag_w == 0 {
        return Ok(external.to_vec());
    }
    let units = (external.len() / ext_w).min(rag.len() / rag_w);
    let (mut ext, mut rg) = (&external[..units * ext_w], &rag[..units * rag_w]);
    let mut rng = rng(derive_seed(seed, &[b"interleave"]));
    let mut out = Vec::with_capacity(ext.len() + rg.len());
    while !ext.is_empty() || !rg.is_empty() {
        let take_ext = rng.random_range(0..ext.len() + rg.len()) < ext.len();
        let stream = if take_ext { &mut ext } else { &mut rg };
        out.push(stream[0].clone());
        *stream = &stream[1..];
    }
    Ok(out)
}

/// Parses `"a:b"` into `(a, b)`.
pub fn parse_ratio(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidConfig(format!("ratio must look like 4:1, got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn write_samples(path: &Path, samples: &[FtSample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Vec<FtSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: n + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, manifest: &MixManifest) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, manifest)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{MockBackend, MockSpec};
    use crate::retrieval::RankedEntry;

    fn corpus(n: usize) -> CorpusStore {
        let rows: Vec<(String, String, String)> = (0..n)
            .map(|i| (format!("p{i:03}"), format!("Title {i}"), format!("passage number {i} about topic {}", i % 7)))
            .collect();
        CorpusStore::from_triples(rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))).unwrap()
    }

    fn ranked(qid: &str, retriever: &str, n: usize) -> RankedList {
        RankedList {
            query_id: qid.into(),
            retriever_id: retriever.into(),
            entries: (0..n)
                .map(|i| RankedEntry {
                    passage_id: format!("p{i:03}"),
                    score: (n - i) as f64,
                })
                .collect(),
        }
    }

    fn doc_blocks(input: &str) -> usize {
        input.lines().filter(|l| l.starts_with("Doc ") && l.contains(" (Title: \"")).count()
    }

    fn fever_query() -> QueryRecord {
        QueryRecord::new("f1", "Paris is in France", &["SUPPORTS"], Task::Fact)
    }

    #[test]
    fn implicit_fever_and_closed_book() {
        let c = corpus(50);
        let reg = TemplateRegistry::builtin();
        let r = ranked("f1", "bm25", 50);
        let s = build_implicit(&fever_query(), &r, 5, "fever", &reg, &c, &Source::Fever).unwrap();
        assert_eq!(s.output, "SUPPORTS");
        assert_eq!(s.meta.k_used, 5);
        assert_eq!(doc_blocks(&s.input), 5);
        assert!(s.input.find("Doc 1 (Title: \"Title 0\")").unwrap() < s.input.find("Doc 2 (Title: \"Title 1\")").unwrap());

        let closed = build_implicit(&fever_query(), &r, 0, "fever", &reg, &c, &Source::Fever).unwrap();
        assert_eq!(closed.meta.k_used, 0);
        assert!(!closed.input.contains("Doc "));
        assert!(!closed.input.contains("{reference}"));

        let k10 = build_implicit(&fever_query(), &r, 10, "fever", &reg, &c, &Source::Fever).unwrap();
        let k40 = build_implicit(&fever_query(), &r, 40, "fever", &reg, &c, &Source::Fever).unwrap();
        assert_eq!(k10.output, k40.output);
        assert_ne!(k10.input, k40.input);
    }

    #[test]
    fn multichoice_label_is_letter() {
        let q = QueryRecord::new("m", "2+2?", &["4"], Task::Multichoice).with_choices(&["3", "4", "5"]);
        assert_eq!(target_label(&q).unwrap(), "B");
        let q = QueryRecord::new("m", "2+2?", &["c"], Task::Multichoice).with_choices(&["3", "4", "5"]);
        assert_eq!(target_label(&q).unwrap(), "C");
    }

    #[test]
    fn reasoning_passthrough_and_labeler_prompt() {
        let c = corpus(10);
        let reg = TemplateRegistry::builtin();
        let q = QueryRecord::new("n1", "who wrote it", &["Someone"], Task::Qa);
        let r = ranked("n1", "bm25", 10);
        let mock = MockBackend::new(MockSpec::always("Doc 1 is relevant."));
        let labeler = Labeler {
            backend: &mock,
            model_id: "labeler".into(),
            parallelism: 1,
        };
        let s = build_reasoning(&q, &r, 3, "nq_reasoning", "label_nq", &reg, &c, &Source::Nq, &labeler).unwrap();
        assert_eq!(s.output, "Doc 1 is relevant.\nSomeone");
        assert!(s.meta.has_reasoning);
        assert!(s.input.contains("Please first provide an analysis with clear reasoning details"));
        let prompt = render_labeler_prompt(&q, &top_k_ids(&r, 3), "label_nq", &reg, &c).unwrap();
        assert!(prompt.contains("explain how the contents lead to the answer: Someone."));

        let empty = MockBackend::new(MockSpec::always("   "));
        let labeler = Labeler {
            backend: &empty,
            model_id: "labeler".into(),
            parallelism: 1,
        };
        assert!(matches!(
            build_reasoning(&q, &r, 3, "nq_reasoning", "label_nq", &reg, &c, &Source::Nq, &labeler),
            Err(Error::EmptyReasoning(_))
        ));
    }

    fn pools(per: usize) -> (BTreeMap<Source, Vec<QueryRecord>>, RankedSet) {
        let mut pools = BTreeMap::new();
        let mut set = RankedSet::new();
        for (source, task) in [(Source::Nq, Task::Qa), (Source::Fever, Task::Fact), (Source::Wow, Task::Dialogue)] {
            let qs: Vec<QueryRecord> = (0..per)
                .map(|i| QueryRecord::new(format!("{source}-{i}"), format!("question {i}"), &["answer"], task))
                .collect();
            for q in &qs {
                set.insert(ranked(&q.id, "bm25", 45));
                set.insert(ranked(&q.id, "e5", 45));
            }
            pools.insert(source, qs);
        }
        (pools, set)
    }

    #[test]
    fn fixed_mix_counts() {
        let c = corpus(45);
        let reg = TemplateRegistry::builtin();
        let (pools, set) = pools(10);
        let mut cfg = MixConfig::uniform(&[Source::Nq, Source::Fever], 2, RetrieverPolicy::Single("bm25".into()), KPolicy::Fixed(4), 7);
        let (samples, manifest) = build_mix(&cfg, &pools, &set, &reg, &c, None).unwrap();
        assert_eq!(samples.len(), 4);
        assert!(samples.iter().all(|s| s.meta.k_used == 4 && doc_blocks(&s.input) == 4));
        assert_eq!(manifest.samples, 4);

        cfg.per_source_counts.insert(Source::Nq, 11);
        cfg.total = 13;
        assert!(matches!(build_mix(&cfg, &pools, &set, &reg, &c, None), Err(Error::PoolExhausted(s)) if s == "nq"));
        cfg.total = 12;
        assert!(matches!(build_mix(&cfg, &pools, &set, &reg, &c, None), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn mixed_retrievers_balance() {
        let c = corpus(45);
        let reg = TemplateRegistry::builtin();
        let (pools, set) = pools(9);
        let cfg = MixConfig::uniform(
            &[Source::Nq, Source::Fever, Source::Wow],
            7,
            RetrieverPolicy::Mixed(vec!["bm25".into(), "e5".into()]),
            KPolicy::Fixed(3),
            1,
        );
        let (_, manifest) = build_mix(&cfg, &pools, &set, &reg, &c, None).unwrap();
        let totals = manifest.retriever_totals();
        assert_eq!(totals.len(), 2);
        assert!(totals["bm25"].abs_diff(totals["e5"]) <= 1, "{totals:?}");
    }

    #[test]
    fn nested_prefix_and_dynamic_k() {
        let c = corpus(45);
        let reg = TemplateRegistry::builtin();
        let (pools, set) = pools(30);
        let small = MixConfig::uniform(&[Source::Nq, Source::Wow], 5, RetrieverPolicy::Single("bm25".into()), KPolicy::Dynamic { lo: 0, hi: 40 }, 3);
        let large = MixConfig::uniform(&[Source::Nq, Source::Wow], 20, RetrieverPolicy::Single("bm25".into()), KPolicy::Dynamic { lo: 0, hi: 40 }, 3);
        let (a, _) = build_mix(&small, &pools, &set, &reg, &c, None).unwrap();
        let (b, _) = build_mix(&large, &pools, &set, &reg, &c, None).unwrap();
        for source in [Source::Nq, Source::Wow] {
            let sa: Vec<_> = a.iter().filter(|s| s.meta.source == source).collect();
            let sb: Vec<_> = b.iter().filter(|s| s.meta.source == source).collect();
            assert_eq!(sa[..], sb[..sa.len()]);
        }
        assert!(b.iter().all(|s| s.meta.k_used <= 40 && doc_blocks(&s.input) == s.meta.k_used));
    }

    #[test]
    fn reasoning_mix_skips_empty() {
        let c = corpus(45);
        let reg = TemplateRegistry::builtin();
        let (pools, set) = pools(4);
        let mut cfg = MixConfig::uniform(&[Source::Nq], 3, RetrieverPolicy::Single("bm25".into()), KPolicy::Fixed(2), 0);
        cfg.reasoning = true;
        assert!(matches!(build_mix(&cfg, &pools, &set, &reg, &c, None), Err(Error::LabelerUnavailable(_))));
        let empty = MockBackend::new(MockSpec::always(""));
        let labeler = Labeler {
            backend: &empty,
            model_id: "m".into(),
            parallelism: 2,
        };
        let (samples, manifest) = build_mix(&cfg, &pools, &set, &reg, &c, Some(&labeler)).unwrap();
        assert!(samples.is_empty());
        assert_eq!(manifest.skipped_empty_reasoning, 3);
    }

    fn tagged(n: usize, tag: &str) -> Vec<FtSample> {
        (0..n)
            .map(|i| FtSample {
                input: format!("{tag}{i}"),
                output: String::new(),
                meta: FtMeta {
                    source: Source::External(tag.into()),
                    retriever_id: String::new(),
                    k_used: 0,
                    has_reasoning: false,
                    query_id: format!("{tag}{i}"),
                },
            })
            .collect()
    }

    #[test]
    fn external_interleave() {
        let rag = tagged(50, "rag");
        let ext = tagged(200, "chat");
        let mixed = mix_external_sft(&rag, &ext, (4, 1), 9).unwrap();
        assert_eq!(mixed.len(), 250);
        let rag_out: Vec<_> = mixed.iter().filter(|s| s.input.starts_with("rag")).cloned().collect();
        assert_eq!(rag_out, rag);
        assert_eq!(mixed, mix_external_sft(&rag, &ext, (4, 1), 9).unwrap());
        assert_ne!(mixed, mix_external_sft(&rag, &ext, (4, 1), 10).unwrap());
        assert_eq!(mix_external_sft(&rag, &ext, (0, 1), 9).unwrap(), rag);
        assert_eq!(mix_external_sft(&rag, &[], (4, 1), 9).unwrap().len(), 0);
        assert_eq!(parse_ratio("4:1").unwrap(), (4, 1));
        assert!(parse_ratio("4").is_err());
    }

    #[test]
    fn external_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ext.jsonl");
        std::fs::write(&p, "{\"input\":\"hi\",\"output\":\"hello\"}\n\n{\"input\":\"x\"}\n").unwrap();
        assert!(matches!(read_external(&p, "chat"), Err(Error::MalformedExternalLine { line: 3, .. })));
        std::fs::write(&p, "{\"input\":\"hi\",\"output\":\"hello\"}\n").unwrap();
        let got = read_external(&p, "chat").unwrap();
        assert_eq!(got[0].meta.source, Source::External("chat".into()));
        let out = dir.path().join("out.jsonl");
        write_samples(&out, &got).unwrap();
        assert_eq!(read_samples(&out).unwrap(), got);
        let line = std::fs::read_to_string(&out).unwrap();
        assert!(line.contains("\"source\":\"external:chat\""));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = MixConfig::uniform(&[Source::Nq, Source::Mmlu], 125, RetrieverPolicy::Mixed(vec!["bm25".into(), "e5".into()]), KPolicy::Dynamic { lo: 0, hi: 40 }, 5);
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"nq\":125"));
        assert_eq!(serde_json::from_str::<MixConfig>(&text).unwrap(), cfg);
        assert!(serde_json::from_str::<Source>("\"bogus\"").is_err());
    }
}
