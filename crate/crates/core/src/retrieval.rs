//! Okapi BM25 inverted index, ranked search, knowledge augmentation, and a
//! precomputed-embedding scorer for externally trained retrievers.
//!
//! Scores use `IDF(t) = ln(1 + (N - df + 0.5) / (df + 0.5))`, the
//! non-negative form, with the usual term-frequency saturation
//! `tf (k1 + 1) / (tf + k1 (1 - b + b len/avgdl))`. Defaults `k1 = 1.2`,
//! `b = 0.75`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tokenizer;
use crate::Rational;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

const INDEX_FORMAT: &str = "forge.bm25";
const INDEX_VERSION: u32 = 1;

/// One stored document: external id, page title, indexed text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredDoc {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// Immutable inverted index over normalized word tokens of `title + text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index<S: Scalar> {
    format: String,
    version: u32,
    pub k1: S,
    pub b: S,
    /// term -> (doc position, term frequency), ascending by position.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_len: Rational,
    docs: Vec<StoredDoc>,
    #[serde(skip)]
    id_to_pos: HashMap<String, u32>,
}

impl<S: Scalar> Bm25Index<S> {
    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_len(&self) -> Rational {
        self.avg_doc_len
    }

    pub fn doc(&self, id: &str) -> Option<&StoredDoc> {
        self.id_to_pos.get(id).map(|&p| &self.docs[p as usize])
    }

    pub fn docs(&self) -> &[StoredDoc] {
        &self.docs
    }

    pub fn term_frequency(&self, term: &str, id: &str) -> u32 {
        let Some(&pos) = self.id_to_pos.get(id) else {
            return 0;
        };
        self.postings
            .get(&tokenizer::normalize(term))
            .and_then(|list| list.iter().find(|(p, _)| *p == pos))
            .map(|(_, tf)| *tf)
            .unwrap_or(0)
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings
            .get(&tokenizer::normalize(term))
            .map(Vec::len)
            .unwrap_or(0)
    }

    pub fn doc_length(&self, id: &str) -> Option<u32> {
        self.id_to_pos.get(id).map(|&p| self.doc_lengths[p as usize])
    }

    fn rebuild_lookup(&mut self) {
        self.id_to_pos = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i as u32))
            .collect();
    }

    fn idf(&self, df: usize) -> S {
        let n = S::from_usize(self.doc_count()).unwrap();
        let df = S::from_usize(df).unwrap();
        let half = S::from_f64(0.5).unwrap();
        (S::one() + (n - df + half) / (df + half)).ln()
    }

    fn avgdl(&self) -> S {
        S::from_u64(*self.avg_doc_len.numer()).unwrap()
            / S::from_u64(*self.avg_doc_len.denom()).unwrap()
    }

    fn term_contribution(&self, tf: u32, df: usize, doc_len: u32) -> S {
        let tf = S::from_u32(tf).unwrap();
        let len_norm = S::one() - self.b + self.b * S::from_u32(doc_len).unwrap() / self.avgdl();
        self.idf(df) * tf * (self.k1 + S::one()) / (tf + self.k1 * len_norm)
    }
}

/// Build an index over `(id, title, text)` documents.
pub fn build_index<S: Scalar>(
    docs: impl IntoIterator<Item = (String, String, String)>,
    k1: S,
    b: S,
) -> Result<Bm25Index<S>> {
    // NaN fails both checks.
    let k1_ok = matches!(k1.partial_cmp(&S::zero()), Some(std::cmp::Ordering::Greater));
    if !k1_ok || !(S::zero()..=S::one()).contains(&b) {
        return Err(Error::InvalidInput(format!(
            "bm25 parameters out of range: k1 {k1} (need > 0), b {b} (need 0..=1)"
        )));
    }
    let mut stored = Vec::new();
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut doc_lengths = Vec::new();
    let mut seen: HashMap<String, u32> = HashMap::new();
    let mut total_len: u64 = 0;

    for (pos, (id, title, text)) in docs.into_iter().enumerate() {
        let pos = pos as u32;
        if seen.insert(id.clone(), pos).is_some() {
            return Err(Error::DuplicateId {
                id,
                first: 0,
                second: 0,
            });
        }
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        let mut len = 0u32;
        for span in tokenizer::word_tokenize(&title)
            .into_iter()
            .chain(tokenizer::word_tokenize(&text))
        {
            if span.is_word() {
                *counts.entry(span.norm).or_insert(0) += 1;
                len += 1;
            }
        }
        for (term, tf) in counts {
            postings.entry(term).or_default().push((pos, tf));
        }
        doc_lengths.push(len);
        total_len += u64::from(len);
        stored.push(StoredDoc { id, title, text });
    }

    if stored.is_empty() {
        return Err(Error::InvalidInput("cannot index an empty corpus".into()));
    }

    let mut index = Bm25Index {
        format: INDEX_FORMAT.into(),
        version: INDEX_VERSION,
        k1,
        b,
        postings,
        avg_doc_len: Rational::new(total_len, stored.len() as u64),
        doc_lengths,
        docs: stored,
        id_to_pos: HashMap::new(),
    };
    index.rebuild_lookup();
    Ok(index)
}

/// Okapi BM25 score of one document for the given query terms. Terms are
/// normalized; duplicates contribute additively; terms absent from the
/// document contribute zero.
pub fn bm25_score<S: Scalar>(
    index: &Bm25Index<S>,
    query_terms: &[impl AsRef<str>],
    doc_id: &str,
) -> Result<S> {
    let &pos = index
        .id_to_pos
        .get(doc_id)
        .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))?;
    let doc_len = index.doc_lengths[pos as usize];
    let mut score = S::zero();
    for term in query_terms {
        let term = tokenizer::normalize(term.as_ref());
        if let Some(list) = index.postings.get(&term) {
            if let Some(&(_, tf)) = list.iter().find(|(p, _)| *p == pos) {
                score = score + index.term_contribution(tf, list.len(), doc_len);
            }
        }
    }
    Ok(score)
}

/// A ranked result. `rank` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit<S> {
    pub doc_id: String,
    pub score: S,
    pub rank: usize,
}

fn rank_and_truncate<S: Scalar>(mut scored: Vec<(String, S)>, k: usize) -> Vec<RankedHit<S>> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (doc_id, score))| RankedHit {
            doc_id,
            score,
            rank: i + 1,
        })
        .collect()
}

/// Top-k documents for a free-text query, ties broken by ascending doc id.
/// Only documents scoring above zero are returned.
pub fn search<S: Scalar>(index: &Bm25Index<S>, query: &str, k: usize) -> Vec<RankedHit<S>> {
    let terms: Vec<String> = tokenizer::word_tokenize(query)
        .into_iter()
        .filter(|s| s.is_word())
        .map(|s| s.norm)
        .collect();
    let mut scores: HashMap<u32, S> = HashMap::new();
    for term in &terms {
        if let Some(list) = index.postings.get(term) {
            let df = list.len();
            for &(pos, tf) in list {
                let contribution = index.term_contribution(tf, df, index.doc_lengths[pos as usize]);
                let entry = scores.entry(pos).or_insert_with(S::zero);
                *entry = *entry + contribution;
            }
        }
    }
    let scored: Vec<(String, S)> = scores
        .into_iter()
        .filter(|&(_, s)| s > S::zero())
        .map(|(pos, s)| (index.docs[pos as usize].id.clone(), s))
        .collect();
    rank_and_truncate(scored, k)
}

/// Concatenate the top-k passages to a question, separated by newlines,
/// truncating passages so the total whitespace-delimited word count stays
/// within `max_words`. The question itself is never truncated.
pub fn augment_question<S: Scalar>(
    question: &str,
    index: &Bm25Index<S>,
    k: usize,
    max_words: usize,
) -> String {
    let question_words = question.split_whitespace().count();
    let mut budget = max_words.saturating_sub(question_words);
    let mut out = question.to_string();
    for hit in search(index, question, k) {
        if budget == 0 {
            break;
        }
        let passage = &index.doc(&hit.doc_id).expect("hit ids come from the index").text;
        let words: Vec<&str> = passage.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let take = words.len().min(budget);
        out.push('\n');
        out.push_str(&words[..take].join(" "));
        budget -= take;
    }
    out
}

pub fn save_index<S: Scalar + Serialize>(index: &Bm25Index<S>, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut file, index).map_err(std::io::Error::from)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn load_index<S: Scalar + for<'de> Deserialize<'de>>(
    path: impl AsRef<Path>,
) -> Result<Bm25Index<S>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut index: Bm25Index<S> =
        serde_json::from_reader(file).map_err(std::io::Error::from)?;
    if index.format != INDEX_FORMAT {
        return Err(Error::InvalidInput(format!(
            "not a bm25 index file (format tag `{}`)",
            index.format
        )));
    }
    if index.version != INDEX_VERSION {
        return Err(Error::FormatVersion {
            found: index.version,
            expected: INDEX_VERSION,
        });
    }
    index.rebuild_lookup();
    Ok(index)
}

/// Fixed-dimension vectors for documents scored by an external retriever.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVectors<S> {
    dim: usize,
    vectors: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> DenseVectors<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<S>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite vector entry".into()));
        }
        self.vectors.insert(id.into(), vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[S]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    /// Text format: header `dim=<D>`, then `id v1 .. vD` per line. The
    /// last D whitespace-separated fields are the vector, so ids (page
    /// titles) may contain spaces.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = file.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::InvalidInput("empty vectors file".into()))?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::InvalidInput(format!("bad header `{header}`")))?;
        let mut out = Self::new(dim);
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() <= dim {
                return Err(Error::InvalidInput(format!(
                    "line {}: expected an id and {dim} values",
                    idx + 2
                )));
            }
            let id = fields[..fields.len() - dim].join(" ");
            let values: Vec<S> = fields[fields.len() - dim..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .and_then(S::from_f64)
                        .ok_or_else(|| Error::InvalidInput(format!("line {}: bad value `{f}`", idx + 2)))
                })
                .collect::<Result<_>>()?;
            out.insert(id, values)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "dim={}", self.dim)?;
        for (id, vector) in &self.vectors {
            write!(file, "{id}")?;
            for v in vector {
                write!(file, " {v}")?;
            }
            writeln!(file)?;
        }
        Ok(())
    }
}

fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut dot = S::zero();
    let mut na = S::zero();
    let mut nb = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na.is_zero() || nb.is_zero() {
        return S::zero();
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Top-k documents by cosine similarity to `query`, skipping `exclusions`,
/// with the same deterministic tiebreak as [`search`].
pub fn dense_search<S: Scalar>(
    vectors: &DenseVectors<S>,
    query: &[S],
    k: usize,
    exclusions: &HashSet<String>,
) -> Result<Vec<RankedHit<S>>> {
    if query.len() != vectors.dim {
        return Err(Error::DimensionMismatch {
            expected: vectors.dim,
            got: query.len(),
        });
    }
    let scored: Vec<(String, S)> = vectors
        .vectors
        .iter()
        .filter(|(id, _)| !exclusions.contains(id.as_str()))
        .map(|(id, v)| (id.clone(), cosine(query, v)))
        .collect();
    Ok(rank_and_truncate(scored, k))
}
