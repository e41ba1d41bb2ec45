//! Okapi BM25 over an in-memory inverted index.
//!
//! score(d, q) = Σ_t qtf(t) · idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|d|/avgdl))
//!
//! with idf(t) = ln(1 + (N − df + 0.5) / (df + 0.5)), which stays positive
//! for terms occurring in more than half the corpus. Query terms are
//! accumulated in ascending term order so that scores are bit-reproducible.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStats, CorpusStore, Passage, QueryRecord};
use crate::error::Result;
use crate::retrieval::RankedList;
use crate::tokenize::tokenize;

pub const RETRIEVER_ID: &str = "bm25";

const MAGIC: &[u8; 8] = b"RAGLABPX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lens: Vec<u32>,
    total_tokens: u64,
}

impl Bm25Index {
    /// Indexes passage bodies in a single pass.
    pub fn build(passages: &[Passage]) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(passages.len());
        let mut total_tokens = 0u64;
        for (doc, p) in passages.iter().enumerate() {
            let terms = tokenize(&p.text);
            doc_lens.push(terms.len() as u32);
            total_tokens += terms.len() as u64;
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting { doc: doc as u32, tf });
            }
        }
        Bm25Index {
            postings,
            doc_lens,
            total_tokens,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lens.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.doc_lens.is_empty() || self.total_tokens == 0 {
            1.0
        } else {
            self.total_tokens as f64 / self.doc_lens.len() as f64
        }
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn stats(&self) -> CorpusStats {
        let passage_count = self.doc_count();
        CorpusStats {
            passage_count,
            mean_passage_tokens: if passage_count == 0 {
                0.0
            } else {
                self.total_tokens as f64 / passage_count as f64
            },
            doc_frequency: self
                .postings
                .iter()
                .map(|(t, p)| (t.clone(), p.len()))
                .collect(),
            total_tokens: self.total_tokens as usize,
        }
    }

    /// Scores every passage sharing at least one term with `terms`.
    /// Returns `(doc index, score)` pairs in no particular order.
    pub fn score_terms(&self, terms: &[String], params: Bm25Params) -> Vec<(u32, f64)> {
        let mut qtf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in terms {
            *qtf.entry(t.as_str()).or_default() += 1;
        }
        let n = self.doc_count() as f64;
        let avgdl = self.avg_doc_len();
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for (term, count) in qtf {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let df = postings.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for p in postings {
                let tf = p.tf as f64;
                let dl = self.doc_lens[p.doc as usize] as f64;
                let weight = idf * (tf * (params.k1 + 1.0))
                    / (tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl));
                *acc.entry(p.doc).or_insert(0.0) += count as f64 * weight;
            }
        }
        acc.into_iter().collect()
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.doc_lens.len() as u64).to_le_bytes())?;
        out.write_all(&self.total_tokens.to_le_bytes())?;
        for len in &self.doc_lens {
            out.write_all(&len.to_le_bytes())?;
        }
        out.write_all(&(self.postings.len() as u64).to_le_bytes())?;
        for (term, postings) in &self.postings {
            out.write_all(&(term.len() as u32).to_le_bytes())?;
            out.write_all(term.as_bytes())?;
            out.write_all(&(postings.len() as u32).to_le_bytes())?;
            for p in postings {
                out.write_all(&p.doc.to_le_bytes())?;
                out.write_all(&p.tf.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("not a raglab postings file".into());
        }
        let version = read_u32(input)?;
        if version != VERSION {
            return Err(format!("unsupported postings version {version}"));
        }
        let n_docs = read_u64(input)? as usize;
        let total_tokens = read_u64(input)?;
        let doc_lens = (0..n_docs).map(|_| read_u32(input)).collect::<std::result::Result<Vec<_>, _>>()?;
        if doc_lens.iter().map(|&l| l as u64).sum::<u64>() != total_tokens {
            return Err("document lengths do not sum to the token total".into());
        }
        let n_terms = read_u64(input)?;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let len = read_u32(input)? as usize;
            let mut bytes = vec![0u8; len];
            input.read_exact(&mut bytes).map_err(|e| e.to_string())?;
            let term = String::from_utf8(bytes).map_err(|e| e.to_string())?;
            let count = read_u32(input)? as usize;
            let mut list = Vec::with_capacity(count);
            for _ in 0..count {
                let doc = read_u32(input)?;
                let tf = read_u32(input)?;
                if doc as usize >= n_docs {
                    return Err(format!("posting for {term:?} points past the last document"));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        Ok(Bm25Index {
            postings,
            doc_lens,
            total_tokens,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::result::Result<u64, String> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u64::from_le_bytes(b))
}

/// Top-`k` passages for `query.question` by BM25. Passages sharing no term
/// with the query are never returned.
pub fn bm25_search(
    store: &CorpusStore,
    query: &QueryRecord,
    k: usize,
    params: Bm25Params,
) -> Result<RankedList> {
    let index = store.index()?;
    let terms = tokenize(&query.question);
    let passages = store.passages();
    let scored = index
        .score_terms(&terms, params)
        .into_iter()
        .map(|(doc, score)| (passages[doc as usize].id.clone(), score))
        .collect();
    Ok(RankedList::from_scores(&query.id, RETRIEVER_ID, scored, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;
    use crate::error::Error;

    fn q(text: &str) -> QueryRecord {
        QueryRecord::new("q", text, &["x"], Task::Qa)
    }

    /// Independent per-document evaluation of the scoring formula.
    fn naive_score(docs: &[Vec<String>], query: &[String], doc: usize, k1: f64, b: f64) -> f64 {
        let n = docs.len() as f64;
        let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let mut terms: Vec<&String> = query.iter().collect();
        terms.sort();
        terms.dedup();
        let mut score = 0.0;
        for t in terms {
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            let tf = docs[doc].iter().filter(|w| *w == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let qtf = query.iter().filter(|w| *w == t).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let dl = docs[doc].len() as f64;
            score += qtf * (idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avgdl)));
        }
        score
    }

    #[test]
    fn three_doc_fixture() {
        let store = CorpusStore::from_triples([("p1", "", "cat sat"), ("p2", "", "dog ran"), ("p3", "", "cat ran")]).unwrap();
        let r = bm25_search(&store, &q("cat"), 2, Bm25Params::default()).unwrap();
        let mut ids = r.ids();
        ids.sort();
        assert_eq!(ids, vec!["p1", "p3"]);
        // Equal length documents with equal tf tie, so id order decides.
        assert_eq!(r.ids(), vec!["p1", "p3"]);
        let docs: Vec<Vec<String>> = ["cat sat", "dog ran", "cat ran"].iter().map(|t| tokenize(t)).collect();
        let expected = naive_score(&docs, &tokenize("cat"), 0, 1.2, 0.75);
        // idf = ln(1 + 1.5/2.5) = ln 1.6; the length term is 1 since all docs have 2 tokens.
        assert!((expected - 1.6f64.ln()).abs() < 1e-12);
        assert_eq!(r.entries[0].score, expected);
    }

    #[test]
    fn no_overlap_gives_empty_list() {
        let store = CorpusStore::from_triples([("p1", "", "cat sat")]).unwrap();
        let r = bm25_search(&store, &q("zebra"), 5, Bm25Params::default()).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn corpus_bounds_result_size() {
        let store = CorpusStore::from_triples([("p1", "", "cat sat")]).unwrap();
        let r = bm25_search(&store, &q("cat"), 10, Bm25Params::default()).unwrap();
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn missing_index_is_reported() {
        let store = CorpusStore::from_triples([("p1", "", "cat sat")]).unwrap().without_index();
        assert!(matches!(
            bm25_search(&store, &q("cat"), 1, Bm25Params::default()),
            Err(Error::IndexNotBuilt)
        ));
    }

    #[test]
    fn postings_round_trip() {
        let store = CorpusStore::from_triples([("p1", "", "a b a"), ("p2", "", "b c")]).unwrap();
        let index = store.index().unwrap();
        let mut buf = Vec::new();
        index.write_to(&mut buf).unwrap();
        let back = Bm25Index::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(&back, index);
        assert_eq!(back.postings("a"), &[Posting { doc: 0, tf: 2 }]);
        assert!(Bm25Index::read_from(&mut &buf[..buf.len() - 3]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn matches_naive_oracle(
            docs in proptest::collection::vec(proptest::collection::vec(0u8..12, 1..12), 1..40),
            query in proptest::collection::vec(0u8..14, 1..8),
            k in 1usize..50,
        ) {
            let texts: Vec<String> = docs
                .iter()
                .map(|d| d.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" "))
                .collect();
            let ids: Vec<String> = (0..texts.len()).map(|i| format!("p{i:03}")).collect();
            let store = CorpusStore::from_triples(ids.iter().zip(&texts).map(|(i, t)| (i.as_str(), "", t.as_str()))).unwrap();
            let qtext = query.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" ");
            let got = bm25_search(&store, &q(&qtext), k, Bm25Params::default()).unwrap();
            proptest::prop_assert!(got.validate().is_ok());

            let tokenized: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
            let qt = tokenize(&qtext);
            let mut expected: Vec<(String, f64)> = (0..texts.len())
                .filter(|&d| qt.iter().any(|t| tokenized[d].contains(t)))
                .map(|d| (ids[d].clone(), naive_score(&tokenized, &qt, d, 1.2, 0.75)))
                .collect();
            expected.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            expected.truncate(k);
            proptest::prop_assert_eq!(got.len(), expected.len());
            for (e, (id, s)) in got.entries.iter().zip(&expected) {
                proptest::prop_assert_eq!(&e.passage_id, id);
                proptest::prop_assert!((e.score - s).abs() <= 1e-9);
            }
        }
    }
}
