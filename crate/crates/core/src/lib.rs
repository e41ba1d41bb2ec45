//! Toolkit for retrieval-augmented generation experiments.
//!
//! The crate covers the whole loop: a passage store with a BM25 index and an
//! exact dense scorer ([`corpus`], [`retrieval`]), retrieval metrics
//! ([`metrics`]), prompt assembly with passage reordering ([`context`]),
//! controlled hard-negative contexts ([`hardneg`]), fine-tuning dataset
//! construction ([`ftdata`]), generation backends ([`generator`]) and the
//! experiment runner that ties them together ([`harness`]).

pub mod context;
pub mod corpus;
pub mod error;
pub mod ftdata;
pub mod generator;
pub mod hardneg;
pub mod harness;
pub mod metrics;
pub mod retrieval;
pub mod seed;
pub mod tokenize;

pub use error::{Error, Result};
