//! Controlled hard-negative contexts.
//!
//! A context holds the gold passage plus `K - 1` negatives, i.e. passages
//! that contain none of the query's answers. Retriever negatives are the
//! highest-ranked answer-free passages; random negatives are drawn
//! uniformly from every answer-free passage in the corpus. The final
//! context is a seeded shuffle, so the gold position is uniform.
//!
//! Passages other than the gold that do contain an answer are left out of
//! the context entirely; the study only covers the single-gold case.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, Passage, QueryRecord};
use crate::error::{Error, Result};
use crate::metrics::contains_answer;
use crate::retrieval::RankedList;
use crate::seed::{derive_seed, rng};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NegativeSource {
    Retriever(String),
    Random,
}

impl fmt::Display for NegativeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NegativeSource::Retriever(id) => write!(f, "retriever({id})"),
            NegativeSource::Random => f.write_str("random"),
        }
    }
}

impl FromStr for NegativeSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "random" {
            return Ok(NegativeSource::Random);
        }
        s.strip_prefix("retriever(")
            .and_then(|r| r.strip_suffix(')'))
            .filter(|id| !id.is_empty())
            .map(|id| NegativeSource::Retriever(id.to_string()))
            .ok_or_else(|| format!("unknown negative source {s:?} (random, retriever(<id>))"))
    }
}

impl TryFrom<String> for NegativeSource {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<NegativeSource> for String {
    fn from(s: NegativeSource) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegInstance {
    pub query_id: String,
    pub gold_passage_id: String,
    /// Context in shuffled (display) order.
    pub context_ids: Vec<String>,
    pub negative_source: NegativeSource,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
}

impl HardNegInstance {
    /// 1-based position of the gold passage in the context.
    pub fn gold_position(&self) -> usize {
        self.context_ids
            .iter()
            .position(|id| *id == self.gold_passage_id)
            .map_or(0, |p| p + 1)
    }

    /// Checks the instance invariants against the corpus.
    pub fn validate(&self, query: &QueryRecord, corpus: &CorpusStore) -> Result<(), String> {
        if self.context_ids.len() != self.k {
            return Err(format!("context has {} passages, K = {}", self.context_ids.len(), self.k));
        }
        let golds = self.context_ids.iter().filter(|id| **id == self.gold_passage_id).count();
        if golds != 1 {
            return Err(format!("gold appears {golds} times"));
        }
        for id in self.context_ids.iter().filter(|id| **id != self.gold_passage_id) {
            let p = corpus.get(id).ok_or_else(|| format!("unknown passage {id:?}"))?;
            if contains_answer(&query.answers, &p.full_text()) {
                return Err(format!("negative {id:?} contains an answer"));
            }
        }
        Ok(())
    }
}

/// The gold passage for a query: its `gold_passage_id` when set, otherwise
/// the best-ranked passage containing an answer.
pub fn identify_gold<'a>(query: &QueryRecord, ranked: &RankedList, corpus: &'a CorpusStore) -> Result<&'a Passage> {
    if let Some(id) = &query.gold_passage_id {
        return corpus.resolve(id);
    }
    for e in &ranked.entries {
        let p = corpus.resolve(&e.passage_id)?;
        if contains_answer(&query.answers, &p.full_text()) {
            return Ok(p);
        }
    }
    Err(Error::NoGold(query.id.clone()))
}

fn check_gold(query: &QueryRecord, gold: &Passage, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if !contains_answer(&query.answers, &gold.full_text()) {
        return Err(Error::GoldNotRelevant {
            query: query.id.clone(),
            passage: gold.id.clone(),
        });
    }
    Ok(())
}

/// The first `count` answer-free passages of `ranked`, skipping the gold,
/// in rank order.
pub fn select_hard_negatives(
    query: &QueryRecord,
    gold: &Passage,
    ranked: &RankedList,
    count: usize,
    corpus: &CorpusStore,
) -> Result<Vec<String>> {
    let mut negatives = Vec::with_capacity(count);
    for e in &ranked.entries {
        if negatives.len() == count {
            break;
        }
        if e.passage_id == gold.id {
            continue;
        }
        let p = corpus.resolve(&e.passage_id)?;
        if !contains_answer(&query.answers, &p.full_text()) {
            negatives.push(e.passage_id.clone());
        }
    }
    if negatives.len() < count {
        return Err(Error::InsufficientNegatives {
            found: negatives.len(),
            needed: count,
        });
    }
    Ok(negatives)
}

pub fn build_hardneg(
    query: &QueryRecord,
    gold: &Passage,
    ranked: &RankedList,
    k: usize,
    seed: u64,
    corpus: &CorpusStore,
) -> Result<HardNegInstance> {
    check_gold(query, gold, k)?;
    let mut context = vec![gold.id.clone()];
    context.extend(select_hard_negatives(query, gold, ranked, k - 1, corpus)?);
    context.shuffle(&mut rng(seed));
    Ok(HardNegInstance {
        query_id: query.id.clone(),
        gold_passage_id: gold.id.clone(),
        context_ids: context,
        negative_source: NegativeSource::Retriever(ranked.retriever_id.clone()),
        k,
        seed,
    })
}

pub fn build_randomneg(
    query: &QueryRecord,
    gold: &Passage,
    corpus: &CorpusStore,
    k: usize,
    seed: u64,
) -> Result<HardNegInstance> {
    check_gold(query, gold, k)?;
    // Partial Fisher-Yates over the corpus, keeping the first k - 1
    // answer-free passages: a uniform sample of the answer-free pool that
    // only inspects as many passages as it needs.
    let passages = corpus.passages();
    let mut order: Vec<usize> = (0..passages.len()).collect();
    let mut rng = rng(seed);
    let mut context = vec![gold.id.clone()];
    let mut drawn = 0;
    while context.len() < k && drawn < order.len() {
        let j = rng.random_range(drawn..order.len());
        order.swap(drawn, j);
        let p = &passages[order[drawn]];
        drawn += 1;
        if p.id != gold.id && !contains_answer(&query.answers, &p.full_text()) {
            context.push(p.id.clone());
        }
    }
    if context.len() < k {
        return Err(Error::InsufficientNegatives {
            found: context.len() - 1,
            needed: k - 1,
        });
    }
    context.shuffle(&mut rng);
    Ok(HardNegInstance {
        query_id: query.id.clone(),
        gold_passage_id: gold.id.clone(),
        context_ids: context,
        negative_source: NegativeSource::Random,
        k,
        seed,
    })
}

/// Seed for the instance of size `k` for `query_id` under `master`.
pub fn child_seed(master: u64, query_id: &str, k: usize) -> u64 {
    derive_seed(master, &[query_id.as_bytes(), &(k as u64).to_le_bytes()])
}

/// One retriever-negative instance per K, each with its own derived seed.
pub fn sweep_negative_count(
    query: &QueryRecord,
    gold: &Passage,
    ranked: &RankedList,
    ks: &[usize],
    master_seed: u64,
    corpus: &CorpusStore,
) -> Result<Vec<HardNegInstance>> {
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!("Ks must be strictly ascending, got {ks:?}")));
    }
    ks.iter()
        .map(|&k| build_hardneg(query, gold, ranked, k, child_seed(master_seed, &query.id, k), corpus))
        .collect()
}

pub fn write_instances(path: &Path, instances: &[HardNegInstance]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for inst in instances {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;
    use crate::retrieval::RankedEntry;

    fn ranked(ids: &[&str]) -> RankedList {
        RankedList {
            query_id: "q1".into(),
            retriever_id: "bm25".into(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| RankedEntry {
                    passage_id: id.to_string(),
                    score: 50.0 - i as f64,
                })
                .collect(),
        }
    }

    fn fixture() -> (CorpusStore, QueryRecord) {
        let corpus = CorpusStore::from_triples([
            ("gold", "", "the answer is paris"),
            ("n1", "", "london is large"),
            ("a1", "", "paris again"),
            ("n2", "", "rome is old"),
            ("n3", "", "berlin is cold"),
            ("n4", "", "madrid is warm"),
        ])
        .unwrap();
        (corpus, QueryRecord::new("q1", "capital of france", &["Paris"], Task::Qa))
    }

    #[test]
    fn k_one_is_gold_only() {
        let (corpus, q) = fixture();
        let gold = corpus.get("gold").unwrap();
        let inst = build_hardneg(&q, gold, &ranked(&["gold", "n1"]), 1, 3, &corpus).unwrap();
        assert_eq!(inst.context_ids, vec!["gold"]);
    }

    #[test]
    fn filter_skips_gold_and_answer_passages() {
        let (corpus, q) = fixture();
        let gold = corpus.get("gold").unwrap();
        let r = ranked(&["gold", "n1", "a1", "n2"]);
        assert_eq!(select_hard_negatives(&q, gold, &r, 2, &corpus).unwrap(), vec!["n1", "n2"]);
        let inst = build_hardneg(&q, gold, &r, 3, 9, &corpus).unwrap();
        let mut ctx = inst.context_ids.clone();
        ctx.sort();
        assert_eq!(ctx, vec!["gold", "n1", "n2"]);
        inst.validate(&q, &corpus).unwrap();
        assert_eq!(inst, build_hardneg(&q, gold, &r, 3, 9, &corpus).unwrap());
    }

    #[test]
    fn exhausted_list_reports_counts() {
        let (corpus, q) = fixture();
        let gold = corpus.get("gold").unwrap();
        let err = build_hardneg(&q, gold, &ranked(&["gold", "n1", "a1"]), 4, 0, &corpus).unwrap_err();
        assert!(matches!(err, Error::InsufficientNegatives { found: 1, needed: 3 }), "{err}");
    }

    #[test]
    fn gold_must_contain_answer() {
        let (corpus, q) = fixture();
        let err = build_hardneg(&q, corpus.get("n1").unwrap(), &ranked(&["n2"]), 2, 0, &corpus).unwrap_err();
        assert!(matches!(err, Error::GoldNotRelevant { .. }));
    }

    #[test]
    fn gold_identification() {
        let (corpus, q) = fixture();
        let r = ranked(&["n1", "a1", "gold"]);
        assert_eq!(identify_gold(&q, &r, &corpus).unwrap().id, "a1");
        assert_eq!(identify_gold(&q.clone().with_gold("gold"), &r, &corpus).unwrap().id, "gold");
        assert!(matches!(identify_gold(&q, &ranked(&["n1"]), &corpus), Err(Error::NoGold(_))));
    }

    #[test]
    fn random_negatives_forced_selection() {
        let (corpus, q) = fixture();
        let gold = corpus.get("gold").unwrap();
        // Answer-free passages: n1..n4.
        let inst = build_randomneg(&q, gold, &corpus, 5, 4).unwrap();
        let mut ctx = inst.context_ids.clone();
        ctx.sort();
        assert_eq!(ctx, vec!["gold", "n1", "n2", "n3", "n4"]);
        assert!(matches!(
            build_randomneg(&q, gold, &corpus, 6, 4),
            Err(Error::InsufficientNegatives { found: 4, needed: 5 })
        ));
    }

    #[test]
    fn random_negatives_skip_answer_passages() {
        let rows: Vec<(String, String)> = (0..200)
            .map(|i| {
                let text = if i % 2 == 0 { format!("doc {i} mentions treasure") } else { format!("doc {i} is plain") };
                (format!("p{i:03}"), text)
            })
            .collect();
        let corpus = CorpusStore::from_triples(rows.iter().map(|(id, t)| (id.as_str(), "", t.as_str()))).unwrap();
        let q = QueryRecord::new("q", "where is it", &["treasure"], Task::Qa);
        let gold = corpus.get("p000").unwrap();
        for seed in 0..50 {
            let inst = build_randomneg(&q, gold, &corpus, 10, seed).unwrap();
            inst.validate(&q, &corpus).unwrap();
            assert_eq!(inst, build_randomneg(&q, gold, &corpus, 10, seed).unwrap());
        }
    }

    #[test]
    fn sweep_prefixes_are_nested() {
        let (corpus, q) = fixture();
        let gold = corpus.get("gold").unwrap();
        let r = ranked(&["n3", "gold", "a1", "n1", "n4", "n2"]);
        let insts = sweep_negative_count(&q, gold, &r, &[1, 3, 5], 77, &corpus).unwrap();
        assert_eq!(insts.iter().map(|i| i.context_ids.len()).collect::<Vec<_>>(), vec![1, 3, 5]);
        for inst in &insts {
            inst.validate(&q, &corpus).unwrap();
            assert_eq!(inst.seed, child_seed(77, "q1", inst.k));
        }
        let three = select_hard_negatives(&q, gold, &r, 2, &corpus).unwrap();
        let five = select_hard_negatives(&q, gold, &r, 4, &corpus).unwrap();
        assert_eq!(&five[..2], three.as_slice());
        assert!(sweep_negative_count(&q, gold, &r, &[3, 1], 77, &corpus).is_err());
    }

    #[test]
    fn source_strings() {
        for s in ["random", "retriever(e5)"] {
            assert_eq!(s.parse::<NegativeSource>().unwrap().to_string(), s);
        }
        assert!("retriever()".parse::<NegativeSource>().is_err());
    }

    #[test]
    fn instance_json_shape() {
        let inst = HardNegInstance {
            query_id: "q".into(),
            gold_passage_id: "g".into(),
            context_ids: vec!["n".into(), "g".into()],
            negative_source: NegativeSource::Retriever("e5".into()),
            k: 2,
            seed: 5,
        };
        let json = serde_json::to_string(&inst).unwrap();
        assert_eq!(
            json,
            r#"{"query_id":"q","gold_passage_id":"g","context_ids":["n","g"],"negative_source":"retriever(e5)","K":2,"seed":5}"#
        );
        assert_eq!(inst.gold_position(), 2);
    }

    proptest::proptest! {
        #[test]
        fn instances_satisfy_invariants(
            answer_mask in proptest::collection::vec(proptest::bool::ANY, 5..60),
            k in 1usize..8,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let rows: Vec<(String, String)> = answer_mask
                .iter()
                .enumerate()
                .map(|(i, &has)| (format!("p{i:02}"), if has { format!("w{i} needle") } else { format!("w{i} hay") }))
                .collect();
            let mut rows = rows;
            rows.push(("gold".into(), "the needle".into()));
            let corpus = CorpusStore::from_triples(rows.iter().map(|(id, t)| (id.as_str(), "", t.as_str()))).unwrap();
            let q = QueryRecord::new("q1", "find it", &["needle"], Task::Qa);
            let gold = corpus.get("gold").unwrap();
            let ids: Vec<&str> = rows.iter().map(|(id, _)| id.as_str()).collect();
            let free = answer_mask.iter().filter(|&&h| !h).count();
            match build_hardneg(&q, gold, &ranked(&ids), k, seed, &corpus) {
                Ok(inst) => proptest::prop_assert!(inst.validate(&q, &corpus).is_ok()),
                Err(Error::InsufficientNegatives { found, needed }) => {
                    proptest::prop_assert_eq!(found, free);
                    proptest::prop_assert!(found < needed);
                }
                Err(e) => proptest::prop_assert!(false, "{e}"),
            }
            match build_randomneg(&q, gold, &corpus, k, seed) {
                Ok(inst) => proptest::prop_assert!(inst.validate(&q, &corpus).is_ok()),
                Err(Error::InsufficientNegatives { .. }) => proptest::prop_assert!(free < k - 1),
                Err(e) => proptest::prop_assert!(false, "{e}"),
            }
        }
    }
}
