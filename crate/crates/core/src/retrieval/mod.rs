//! Ranking passages for queries.
//!
//! Every retriever produces a [`RankedList`]: entries sorted by descending
//! score with ties broken by ascending passage id, no duplicates.

pub mod bm25;
pub mod dense;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bm25::{bm25_search, Bm25Index, Bm25Params};
pub use dense::{dense_search, EmbeddingTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub passage_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub retriever_id: String,
    pub entries: Vec<RankedEntry>,
}

/// Descending score, then ascending passage id.
pub fn rank_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.passage_id.cmp(&b.passage_id))
}

impl RankedList {
    /// Sorts `scored` under the tie rule and keeps the first `k`.
    pub fn from_scores(
        query_id: impl Into<String>,
        retriever_id: impl Into<String>,
        scored: Vec<(String, f64)>,
        k: usize,
    ) -> Self {
        let mut entries: Vec<RankedEntry> = scored
            .into_iter()
            .map(|(passage_id, score)| RankedEntry { passage_id, score })
            .collect();
        if entries.len() > k {
            entries.select_nth_unstable_by(k, rank_order);
            entries.truncate(k);
        }
        entries.sort_by(rank_order);
        RankedList {
            query_id: query_id.into(),
            retriever_id: retriever_id.into(),
            entries,
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.passage_id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncated(&self, k: usize) -> RankedList {
        RankedList {
            query_id: self.query_id.clone(),
            retriever_id: self.retriever_id.clone(),
            entries: self.entries.iter().take(k).cloned().collect(),
        }
    }

    /// Checks sortedness under the tie rule and id uniqueness.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.passage_id.as_str()) {
                return Err(format!("duplicate passage {:?}", e.passage_id));
            }
            if e.score.is_nan() {
                return Err(format!("NaN score for {:?}", e.passage_id));
            }
        }
        for w in self.entries.windows(2) {
            if rank_order(&w[0], &w[1]) != Ordering::Less {
                return Err(format!(
                    "entries out of order at {:?} / {:?}",
                    w[0].passage_id, w[1].passage_id
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixStrategy {
    /// Interleave list heads in input order, skipping passages already
    /// emitted.
    RoundRobin,
    /// Order by each passage's best (smallest) rank across the lists.
    UnionByRank,
}

/// Combines the lists of several retrievers for one query.
///
/// Mixed entries carry synthetic scores `1 / position` (round robin) or
/// `1 / best_rank` (union by rank) so the result still satisfies the
/// [`RankedList`] ordering invariant.
pub fn mix_retrievers(lists: &[RankedList], k: usize, strategy: MixStrategy) -> Result<RankedList> {
    if lists.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "mixing needs at least two lists, got {}",
            lists.len()
        )));
    }
    let query_id = &lists[0].query_id;
    if let Some(other) = lists.iter().find(|l| &l.query_id != query_id) {
        return Err(Error::MixedQueryIds(query_id.clone(), other.query_id.clone()));
    }
    let sources: BTreeSet<&str> = lists.iter().map(|l| l.retriever_id.as_str()).collect();
    let retriever_id = format!("mix({})", sources.into_iter().collect::<Vec<_>>().join(","));

    let entries = match strategy {
        MixStrategy::RoundRobin => {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            let depth = lists.iter().map(RankedList::len).max().unwrap_or(0);
            'outer: for i in 0..depth {
                for list in lists {
                    if out.len() == k {
                        break 'outer;
                    }
                    if let Some(e) = list.entries.get(i) {
                        if seen.insert(e.passage_id.as_str()) {
                            out.push(e.passage_id.clone());
                        }
                    }
                }
            }
            out.into_iter()
                .enumerate()
                .map(|(i, passage_id)| RankedEntry {
                    passage_id,
                    score: 1.0 / (i + 1) as f64,
                })
                .collect()
        }
        MixStrategy::UnionByRank => {
            let mut best: HashMap<&str, usize> = HashMap::new();
            for list in lists {
                for (i, e) in list.entries.iter().enumerate() {
                    let r = best.entry(e.passage_id.as_str()).or_insert(i + 1);
                    *r = (*r).min(i + 1);
                }
            }
            let mut ranked: Vec<(&str, usize)> = best.into_iter().collect();
            ranked.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
            ranked
                .into_iter()
                .take(k)
                .map(|(id, r)| RankedEntry {
                    passage_id: id.to_string(),
                    score: 1.0 / r as f64,
                })
                .collect()
        }
    };
    Ok(RankedList {
        query_id: query_id.clone(),
        retriever_id,
        entries,
    })
}

/// Reads RankedList JSONL (one list per line).
pub fn read_ranked_lists(path: &Path) -> Result<Vec<RankedList>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let list: RankedList = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        list.validate().map_err(|reason| Error::MalformedLine {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        })?;
        out.push(list);
    }
    Ok(out)
}

pub fn write_ranked_lists<W: Write>(out: W, lists: &[RankedList]) -> Result<()> {
    let mut out = BufWriter::new(out);
    for list in lists {
        serde_json::to_writer(&mut out, list)?;
        writeln!(out).map_err(|e| Error::io("<output>", e))?;
    }
    out.flush().map_err(|e| Error::io("<output>", e))
}

/// Ranked lists indexed by retriever id, then query id.
#[derive(Debug, Clone, Default)]
pub struct RankedSet {
    lists: HashMap<String, HashMap<String, RankedList>>,
}

impl RankedSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Later lists for the same (retriever, query) replace earlier ones.
    pub fn from_lists(lists: impl IntoIterator<Item = RankedList>) -> Self {
        let mut set = Self::new();
        for list in lists {
            set.insert(list);
        }
        set
    }

    pub fn insert(&mut self, list: RankedList) {
        self.lists
            .entry(list.retriever_id.clone())
            .or_default()
            .insert(list.query_id.clone(), list);
    }

    pub fn get(&self, retriever: &str, query: &str) -> Result<&RankedList> {
        self.lists
            .get(retriever)
            .and_then(|m| m.get(query))
            .ok_or_else(|| Error::MissingRankedList {
                retriever: retriever.to_string(),
                query: query.to_string(),
            })
    }

    /// Retriever ids, sorted.
    pub fn retrievers(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.lists.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }

    /// All lists of one retriever, sorted by query id.
    pub fn lists_for(&self, retriever: &str) -> Vec<&RankedList> {
        let mut out: Vec<&RankedList> = self.lists.get(retriever).map(|m| m.values().collect()).unwrap_or_default();
        out.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        out
    }
}
