//! Display-order strategies for retrieved passages.
//!
//! The reordering strategy places the passage of rank `i` (1-based) at
//! display position `(i + 1) / 2` when `i` is odd and `k + 1 - i / 2` when
//! `i` is even, so the best passages sit at both ends of the context and the
//! weakest ones end up in the middle.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::retrieval::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OrderingStrategy {
    Original,
    Reordered,
    Reversed,
    Random { seed: u64 },
}

impl fmt::Display for OrderingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingStrategy::Original => f.write_str("original"),
            OrderingStrategy::Reordered => f.write_str("reordered"),
            OrderingStrategy::Reversed => f.write_str("reversed"),
            OrderingStrategy::Random { seed } => write!(f, "random({seed})"),
        }
    }
}

impl FromStr for OrderingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "original" => Ok(OrderingStrategy::Original),
            "reordered" => Ok(OrderingStrategy::Reordered),
            "reversed" => Ok(OrderingStrategy::Reversed),
            other => other
                .strip_prefix("random(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|seed| seed.trim().parse().ok())
                .map(|seed| OrderingStrategy::Random { seed })
                .ok_or_else(|| {
                    format!("unknown ordering {other:?} (original, reordered, reversed, random(<seed>))")
                }),
        }
    }
}

impl TryFrom<String> for OrderingStrategy {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<OrderingStrategy> for String {
    fn from(o: OrderingStrategy) -> String {
        o.to_string()
    }
}

/// `Order(d_i)` for every rank: entry `i - 1` is the 1-based display
/// position of the rank-`i` passage.
pub fn reorder_positions(k: usize) -> Vec<usize> {
    (1..=k)
        .map(|i| if i % 2 == 1 { i.div_ceil(2) } else { k + 1 - i / 2 })
        .collect()
}

/// The inverse view of [`reorder_positions`]: entry `p - 1` is the 1-based
/// rank shown at display position `p`.
pub fn reorder_sequence(k: usize) -> Vec<usize> {
    let mut seq = vec![0; k];
    for (rank0, pos) in reorder_positions(k).into_iter().enumerate() {
        seq[pos - 1] = rank0 + 1;
    }
    seq
}

/// Applies `strategy` to items given in rank order.
pub fn order_items<T: Clone>(ranked: &[T], strategy: OrderingStrategy) -> Vec<T> {
    match strategy {
        OrderingStrategy::Original => ranked.to_vec(),
        OrderingStrategy::Reversed => ranked.iter().rev().cloned().collect(),
        OrderingStrategy::Reordered => reorder_sequence(ranked.len())
            .into_iter()
            .map(|rank| ranked[rank - 1].clone())
            .collect(),
        OrderingStrategy::Random { seed } => {
            let mut out = ranked.to_vec();
            out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            out
        }
    }
}

/// Display order of the top-`k` passage ids of `ranked`.
pub fn apply_ordering(ranked: &RankedList, k: usize, strategy: OrderingStrategy) -> Vec<String> {
    let top: Vec<String> = ranked
        .entries
        .iter()
        .take(k)
        .map(|e| e.passage_id.clone())
        .collect();
    order_items(&top, strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::RankedEntry;

    fn ranked(ids: &[&str]) -> RankedList {
        RankedList {
            query_id: "q".into(),
            retriever_id: "r".into(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| RankedEntry {
                    passage_id: id.to_string(),
                    score: 100.0 - i as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn five_passages() {
        assert_eq!(reorder_positions(5), vec![1, 5, 2, 4, 3]);
        assert_eq!(reorder_sequence(5), vec![1, 3, 5, 4, 2]);
    }

    #[test]
    fn degenerate_sizes() {
        assert_eq!(reorder_sequence(0), Vec::<usize>::new());
        assert_eq!(reorder_sequence(1), vec![1]);
        assert_eq!(reorder_sequence(2), vec![1, 2]);
    }

    #[test]
    fn four_passages() {
        assert_eq!(reorder_positions(4), vec![1, 4, 2, 3]);
        assert_eq!(reorder_sequence(4), vec![1, 3, 4, 2]);
    }

    #[test]
    fn strategies_on_a_list() {
        let r = ranked(&["p9", "p4", "p7"]);
        assert_eq!(apply_ordering(&r, 3, OrderingStrategy::Reordered), vec!["p9", "p7", "p4"]);
        assert_eq!(apply_ordering(&r, 3, OrderingStrategy::Original), vec!["p9", "p4", "p7"]);
        assert_eq!(apply_ordering(&r, 3, OrderingStrategy::Reversed), vec!["p7", "p4", "p9"]);
        assert_eq!(apply_ordering(&r, 2, OrderingStrategy::Original), vec!["p9", "p4"]);
        let a = apply_ordering(&r, 3, OrderingStrategy::Random { seed: 11 });
        let b = apply_ordering(&r, 3, OrderingStrategy::Random { seed: 11 });
        assert_eq!(a, b);
    }

    #[test]
    fn strategy_strings() {
        for s in ["original", "reordered", "reversed", "random(42)"] {
            let o: OrderingStrategy = s.parse().unwrap();
            assert_eq!(o.to_string(), s);
        }
        assert!("random".parse::<OrderingStrategy>().is_err());
        assert!("shuffled".parse::<OrderingStrategy>().is_err());
    }

    #[test]
    fn bijection_up_to_1000() {
        for k in 1..=1000 {
            let pos = reorder_positions(k);
            let mut seen = vec![false; k];
            for p in pos {
                assert!((1..=k).contains(&p));
                assert!(!seen[p - 1], "k={k} position {p} used twice");
                seen[p - 1] = true;
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn reordering_keeps_ends_and_multiset(k in 1usize..200, seed in proptest::prelude::any::<u64>()) {
            let items: Vec<usize> = (1..=k).collect();
            let shown = order_items(&items, OrderingStrategy::Reordered);
            proptest::prop_assert_eq!(shown[0], 1);
            if k >= 2 {
                proptest::prop_assert_eq!(shown[k - 1], 2);
            }
            for strategy in [
                OrderingStrategy::Original,
                OrderingStrategy::Reordered,
                OrderingStrategy::Reversed,
                OrderingStrategy::Random { seed },
            ] {
                let mut sorted = order_items(&items, strategy);
                sorted.sort();
                proptest::prop_assert_eq!(&sorted, &items);
            }
        }
    }
}
