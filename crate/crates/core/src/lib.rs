//! Synthesis and auditing of multiple-choice QA datasets from encyclopedic
//! corpora.
//!
//! The pipeline turns page paragraphs into questions and page titles into
//! correct options, sources distractors from a differential-diagnosis graph
//! and BM25 retrieval, applies a cue-masking strategy (naive token-level,
//! naive word-level, or probability-matching), and audits the result for
//! answer leakage with a transparent linear adversary.
//!
//! Modules follow the pipeline stages:
//!
//! * [`corpus`]: record parsing, page filtering, paragraph extraction
//! * [`tokenizer`]: word/subword tokenization with char-exact spans
//! * [`masking`]: the three cue-masking strategies
//! * [`retrieval`]: BM25 index, search, knowledge augmentation, dense scoring
//! * [`distractors`]: diff-dx graph, distractor assembly, precision/recall
//! * [`generator`]: end-to-end dataset builder and (de)serialization
//! * [`audit`]: cue-classifier leakage audit and extraneous-masking stats
//!
//! Ranking and training math is generic over [`scalar::Scalar`] (`f32` or
//! `f64`); the aliases below pin the `f64` instantiations the CLI uses.
//! Masking probabilities and retrieval metrics are exact rationals.

pub mod audit;
pub mod corpus;
pub mod distractors;
pub mod error;
pub mod generator;
pub mod masking;
pub mod retrieval;
pub mod rng;
pub mod scalar;
pub mod tokenizer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Exact rational for masking probabilities (`1/k` with small `k`).
pub type Rational = num_rational::Ratio<u64>;

/// Arbitrary-precision rational for averaged retrieval metrics.
pub type BigRational = num_rational::BigRational;

/// Default scalar for scores and weights.
pub type Score = f64;

pub type Bm25Index = retrieval::Bm25Index<Score>;
pub type RankedHit = retrieval::RankedHit<Score>;
pub type DenseVectors = retrieval::DenseVectors<Score>;
pub type CueClassifier = audit::CueClassifier<Score>;
pub type AuditReport = audit::AuditReport<Score>;
