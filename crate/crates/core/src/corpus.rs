//! Passage corpus and query sets: ingestion, validation and on-disk store.
//!
//! A store directory holds `passages.jsonl` (one [`Passage`] per line, in
//! ingestion order) and `postings.bin` (the BM25 inverted index, see
//! [`crate::retrieval::bm25`]). Building is single-writer; a loaded store is
//! immutable and can be shared freely between reader threads.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::bm25::Bm25Index;
use crate::tokenize::{count_tokens, normalize_whitespace};

pub const PASSAGES_FILE: &str = "passages.jsonl";
pub const POSTINGS_FILE: &str = "postings.bin";

/// Corpora are expected to arrive pre-chunked into passages shorter than
/// this many words. Longer passages are accepted with a warning.
pub const CHUNK_WORD_LIMIT: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub text: String,
    pub token_count: usize,
}

impl Passage {
    /// Builds a passage with whitespace-normalized text and a fresh token
    /// count. Returns `None` when the text is empty after normalization.
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: &str) -> Option<Self> {
        let text = normalize_whitespace(text);
        if text.is_empty() {
            return None;
        }
        Some(Passage {
            id: id.into(),
            title: normalize_whitespace(&title.into()),
            token_count: count_tokens(&text),
            text,
        })
    }

    /// Title and body joined the way relevance labeling sees them.
    pub fn full_text(&self) -> String {
        format!("{} {}", self.title, self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Qa,
    Multihop,
    Longform,
    Slotfill,
    Fact,
    Dialogue,
    Multichoice,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Qa => "qa",
            Task::Multihop => "multihop",
            Task::Longform => "longform",
            Task::Slotfill => "slotfill",
            Task::Fact => "fact",
            Task::Dialogue => "dialogue",
            Task::Multichoice => "multichoice",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_passage_id: Option<String>,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl QueryRecord {
    pub fn new(id: impl Into<String>, question: impl Into<String>, answers: &[&str], task: Task) -> Self {
        QueryRecord {
            id: id.into(),
            question: question.into(),
            answers: answers.iter().map(|a| a.to_string()).collect(),
            gold_passage_id: None,
            task,
            choices: None,
        }
    }

    pub fn with_gold(mut self, passage_id: impl Into<String>) -> Self {
        self.gold_passage_id = Some(passage_id.into());
        self
    }

    pub fn with_choices(mut self, choices: &[&str]) -> Self {
        self.choices = Some(choices.iter().map(|c| c.to_string()).collect());
        self
    }

    /// Checks the record invariants, returning a human readable reason on
    /// failure. Empty answers are reported separately as
    /// [`Error::EmptyAnswers`].
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty query id".into());
        }
        match (&self.choices, self.task) {
            (None, Task::Multichoice) => Err("multichoice query without choices".into()),
            (Some(_), t) if t != Task::Multichoice => {
                Err(format!("choices given for {} query", t.as_str()))
            }
            _ => Ok(()),
        }
    }

    fn has_valid_answers(&self) -> bool {
        !self.answers.is_empty() && self.answers.iter().all(|a| !a.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub passage_count: usize,
    pub mean_passage_tokens: f64,
    pub doc_frequency: BTreeMap<String, usize>,
    pub total_tokens: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Fail on the first malformed line instead of skipping it.
    pub strict: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    /// 1-based line numbers of skipped malformed lines.
    pub skipped_lines: Vec<usize>,
    /// Passage ids at or above [`CHUNK_WORD_LIMIT`] words.
    pub oversized: Vec<String>,
}

#[derive(Deserialize)]
struct RawPassage {
    id: String,
    title: String,
    text: String,
}

/// An immutable passage collection with its statistics and (optionally) a
/// BM25 index.
#[derive(Debug, Clone)]
pub struct CorpusStore {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
    stats: CorpusStats,
    index: Option<Bm25Index>,
}

impl CorpusStore {
    /// Builds a store and its index from passages, rejecting duplicate ids.
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self> {
        let by_id = index_ids(&passages)?;
        let index = Bm25Index::build(&passages);
        let stats = index.stats();
        Ok(CorpusStore {
            passages,
            by_id,
            stats,
            index: Some(index),
        })
    }

    /// Convenience for tests and fixtures: `(id, title, text)` triples.
    pub fn from_triples<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Result<Self> {
        let passages = rows
            .into_iter()
            .map(|(id, title, text)| {
                Passage::new(id, title, text).ok_or_else(|| Error::MalformedLine {
                    path: PathBuf::from("<memory>"),
                    line: 0,
                    reason: format!("passage {id:?} has empty text"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_passages(passages)
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn resolve(&self, id: &str) -> Result<&Passage> {
        self.get(id).ok_or_else(|| Error::UnresolvedPassage(id.to_string()))
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    pub fn index(&self) -> Result<&Bm25Index> {
        self.index.as_ref().ok_or(Error::IndexNotBuilt)
    }

    /// Drops the inverted index, keeping passages and statistics.
    pub fn without_index(mut self) -> Self {
        self.index = None;
        self
    }

    /// Writes `passages.jsonl` and, if present, `postings.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(PASSAGES_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        for p in &self.passages {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
        if let Some(index) = &self.index {
            let path = dir.join(POSTINGS_FILE);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = BufWriter::new(file);
            index.write_to(&mut out).map_err(|e| Error::io(&path, e))?;
            out.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Loads a store written by [`CorpusStore::save`]. A missing postings
    /// file yields a store without an index.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(PASSAGES_FILE);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut passages = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let p: Passage = serde_json::from_str(&line).map_err(|e| Error::BadStore {
                path: path.clone(),
                reason: format!("line {}: {e}", n + 1),
            })?;
            if count_tokens(&p.text) != p.token_count {
                return Err(Error::BadStore {
                    path: path.clone(),
                    reason: format!("stale token count for passage {:?}", p.id),
                });
            }
            passages.push(p);
        }
        let by_id = index_ids(&passages)?;

        let postings_path = dir.join(POSTINGS_FILE);
        if !postings_path.exists() {
            let stats = Bm25Index::build(&passages).stats();
            return Ok(CorpusStore {
                passages,
                by_id,
                stats,
                index: None,
            });
        }
        let file = File::open(&postings_path).map_err(|e| Error::io(&postings_path, e))?;
        let index = Bm25Index::read_from(&mut BufReader::new(file)).map_err(|reason| Error::BadStore {
            path: postings_path.clone(),
            reason,
        })?;
        if index.doc_count() != passages.len() {
            return Err(Error::BadStore {
                path: postings_path,
                reason: format!(
                    "index covers {} passages, store has {}",
                    index.doc_count(),
                    passages.len()
                ),
            });
        }
        let stats = index.stats();
        Ok(CorpusStore {
            passages,
            by_id,
            stats,
            index: Some(index),
        })
    }
}

fn index_ids(passages: &[Passage]) -> Result<HashMap<String, usize>> {
    let mut by_id = HashMap::with_capacity(passages.len());
    for (i, p) in passages.iter().enumerate() {
        if by_id.insert(p.id.clone(), i).is_some() {
            return Err(Error::DuplicateId(p.id.clone()));
        }
    }
    Ok(by_id)
}

/// Reads a corpus JSONL file (`{"id","title","text"}` per line) into a
/// store. Malformed lines are skipped unless `opts.strict`; duplicate ids
/// are always fatal.
pub fn ingest_corpus(path: &Path, opts: IngestOptions) -> Result<(CorpusStore, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = IngestReport::default();
    let mut passages = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawPassage>(&line)
            .map_err(|e| e.to_string())
            .and_then(|raw| {
                if raw.id.is_empty() {
                    return Err("empty id".to_string());
                }
                let id = raw.id.clone();
                Passage::new(raw.id, raw.title, &raw.text)
                    .ok_or_else(|| format!("passage {id:?} has empty text"))
            });
        match parsed {
            Ok(p) => {
                if !seen.insert(p.id.clone()) {
                    return Err(Error::DuplicateId(p.id));
                }
                if p.text.split(' ').count() >= CHUNK_WORD_LIMIT {
                    log::warn!(
                        "{}:{line_no}: passage {:?} has {} words; expected pre-chunked passages under {CHUNK_WORD_LIMIT}",
                        path.display(),
                        p.id,
                        p.text.split(' ').count()
                    );
                    report.oversized.push(p.id.clone());
                }
                passages.push(p);
            }
            Err(reason) if opts.strict => {
                return Err(Error::MalformedLine {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason,
                })
            }
            Err(reason) => {
                log::warn!("{}:{line_no}: skipping malformed line: {reason}", path.display());
                report.skipped_lines.push(line_no);
            }
        }
    }
    Ok((CorpusStore::from_passages(passages)?, report))
}

/// Reads a query JSONL file, preserving file order.
pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_query_line(&line).map_err(|reason| match reason {
            QueryLineError::EmptyAnswers(id) => Error::EmptyAnswers(id),
            QueryLineError::Malformed(reason) => Error::MalformedLine {
                path: path.to_path_buf(),
                line: n + 1,
                reason,
            },
        })?);
    }
    Ok(out)
}

enum QueryLineError {
    EmptyAnswers(String),
    Malformed(String),
}

fn parse_query_line(line: &str) -> Result<QueryRecord, QueryLineError> {
    let q: QueryRecord =
        serde_json::from_str(line).map_err(|e| QueryLineError::Malformed(e.to_string()))?;
    if !q.has_valid_answers() {
        return Err(QueryLineError::EmptyAnswers(q.id));
    }
    q.validate().map_err(QueryLineError::Malformed)?;
    Ok(q)
}

/// Writes queries back out as JSONL.
pub fn write_queries(path: &Path, queries: &[QueryRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for q in queries {
        serde_json::to_writer(&mut out, q)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
