//! Relevance labels, recall/precision at k, and answer scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, Passage, QueryRecord};
use crate::error::{Error, Result};
use crate::retrieval::RankedList;
use crate::tokenize::tokenize;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Casefold, strip punctuation, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    tokenize(text).join(" ")
}

/// [`normalize_answer`] with English articles removed; used for exact match.
pub fn normalize_answer_strict(text: &str) -> String {
    tokenize(text)
        .into_iter()
        .filter(|t| !ARTICLES.contains(&t.as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// True iff some non-empty normalized answer occurs in the normalized text.
pub fn contains_answer(answers: &[String], text: &str) -> bool {
    let haystack = normalize_answer(text);
    answers.iter().any(|a| {
        let needle = normalize_answer(a);
        !needle.is_empty() && haystack.contains(&needle)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    #[default]
    AnswerContainment,
    GoldId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    CasefoldPunctStrip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelevanceLabeler {
    #[serde(default)]
    pub mode: LabelMode,
    #[serde(default)]
    pub normalization: Normalization,
}

impl RelevanceLabeler {
    pub fn containment() -> Self {
        RelevanceLabeler::default()
    }

    pub fn gold_id() -> Self {
        RelevanceLabeler {
            mode: LabelMode::GoldId,
            ..Default::default()
        }
    }
}

pub fn label_relevant(query: &QueryRecord, passage: &Passage, labeler: RelevanceLabeler) -> Result<bool> {
    match labeler.mode {
        LabelMode::AnswerContainment => Ok(contains_answer(&query.answers, &passage.full_text())),
        LabelMode::GoldId => query
            .gold_passage_id
            .as_deref()
            .map(|gold| gold == passage.id)
            .ok_or_else(|| Error::MissingGoldId(query.id.clone())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

/// Relevance flags for the entries of `ranked`, in rank order.
pub fn relevance_flags(
    ranked: &RankedList,
    query: &QueryRecord,
    corpus: &CorpusStore,
    labeler: RelevanceLabeler,
) -> Result<Vec<bool>> {
    ranked
        .entries
        .iter()
        .map(|e| label_relevant(query, corpus.resolve(&e.passage_id)?, labeler))
        .collect()
}

/// Count of relevant passages among the first `k` flags.
pub fn relevant_in_top(flags: &[bool], k: usize) -> usize {
    flags.iter().take(k).filter(|&&r| r).count()
}

/// Per-query curve from precomputed flags. Recall uses presence semantics:
/// 1 when any relevant passage is in the top k.
pub fn curve_from_flags(flags: &[bool], ks: &[usize]) -> Vec<CurvePoint> {
    ks.iter()
        .map(|&k| {
            let hits = relevant_in_top(flags, k);
            CurvePoint {
                k,
                recall: if hits > 0 { 1.0 } else { 0.0 },
                precision: hits as f64 / k as f64,
                accuracy: None,
            }
        })
        .collect()
}

pub fn recall_precision_at_k(
    ranked: &RankedList,
    query: &QueryRecord,
    ks: &[usize],
    labeler: RelevanceLabeler,
    corpus: &CorpusStore,
) -> Result<Vec<CurvePoint>> {
    check_ks(ks)?;
    let flags = relevance_flags(ranked, query, corpus, labeler)?;
    Ok(curve_from_flags(&flags, ks))
}

pub(crate) fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!(
            "ks must be non-empty, strictly ascending and >= 1, got {ks:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Containment,
    ExactMatch,
}

pub fn score_answer(prediction: &str, query: &QueryRecord, mode: ScoreMode) -> bool {
    match mode {
        ScoreMode::Containment => contains_answer(&query.answers, prediction),
        ScoreMode::ExactMatch => {
            let p = normalize_answer_strict(prediction);
            query.answers.iter().any(|a| normalize_answer_strict(a) == p)
        }
    }
}

/// One row of a similarity-curve table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub retriever_id: String,
    #[serde(flatten)]
    pub point: CurvePoint,
}

/// Mean recall and precision at each k, per retriever. Every retriever must
/// cover the same set of queries.
pub fn similarity_curves(
    lists_by_retriever: &BTreeMap<String, Vec<RankedList>>,
    queries: &[QueryRecord],
    ks: &[usize],
    labeler: RelevanceLabeler,
    corpus: &CorpusStore,
) -> Result<Vec<CurveRow>> {
    check_ks(ks)?;
    let by_id: HashMap<&str, &QueryRecord> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut reference: Option<(&str, BTreeSet<&str>)> = None;
    let mut rows = Vec::new();
    for (retriever, lists) in lists_by_retriever {
        let covered: BTreeSet<&str> = lists.iter().map(|l| l.query_id.as_str()).collect();
        if covered.len() != lists.len() {
            return Err(Error::InvalidConfig(format!(
                "retriever {retriever:?} has several lists for one query"
            )));
        }
        match &reference {
            None => reference = Some((retriever.as_str(), covered)),
            Some((first, set)) if *set != covered => {
                return Err(Error::QuerySetMismatch(first.to_string(), retriever.clone()))
            }
            Some(_) => {}
        }
        let mut hits = vec![0usize; ks.len()];
        let mut present = vec![0usize; ks.len()];
        for list in lists {
            let query = by_id
                .get(list.query_id.as_str())
                .ok_or_else(|| Error::InvalidConfig(format!("unknown query {:?}", list.query_id)))?;
            let flags = relevance_flags(list, query, corpus, labeler)?;
            for (i, &k) in ks.iter().enumerate() {
                let h = relevant_in_top(&flags, k);
                hits[i] += h;
                present[i] += (h > 0) as usize;
            }
        }
        let n = lists.len().max(1) as f64;
        for (i, &k) in ks.iter().enumerate() {
            rows.push(CurveRow {
                retriever_id: retriever.clone(),
                point: CurvePoint {
                    k,
                    recall: present[i] as f64 / n,
                    precision: hits[i] as f64 / (k as f64 * n),
                    accuracy: None,
                },
            });
        }
    }
    Ok(rows)
}

/// CSV with columns `retriever_id,k,recall,precision` plus `accuracy` when
/// any row carries one.
pub fn write_curves_csv<W: Write>(out: W, rows: &[CurveRow]) -> Result<()> {
    let with_accuracy = rows.iter().any(|r| r.point.accuracy.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["retriever_id", "k", "recall", "precision"];
    if with_accuracy {
        header.push("accuracy");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.retriever_id.clone(),
            r.point.k.to_string(),
            r.point.recall.to_string(),
            r.point.precision.to_string(),
        ];
        if with_accuracy {
            rec.push(r.point.accuracy.map(|a| a.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
