//! Ingestion and filtering of encyclopedic page records.
//!
//! The on-disk corpus is UTF-8 JSON lines, one record per line:
//!
//! ```text
//! {"id":"w1","title":"Common cold","paragraphs":["..."],"source":"wikipedia",
//!  "meta":{"is_person":false,"is_organization":false,"is_year":false}}
//! ```
//!
//! `meta` and its flags are optional and default to false. Crawling and the
//! knowledge-base lookups that produce the flags happen upstream; this module
//! only consumes their output.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Wikipedia,
    Wikidoc,
    Wikem,
    #[serde(other)]
    Other,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_person: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_organization: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_year: bool,
}

/// One encyclopedic page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRecord {
    pub id: String,
    pub title: String,
    pub paragraphs: Vec<String>,
    pub source: Source,
    #[serde(default, skip_serializing_if = "is_default_meta")]
    pub meta: RecordMeta,
}

fn is_default_meta(meta: &RecordMeta) -> bool {
    *meta == RecordMeta::default()
}

/// Ingestion counters. `dropped_by_rule` accounts for every dropped record,
/// so `records_in - records_kept == sum(dropped_by_rule)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub records_in: u64,
    pub records_kept: u64,
    pub paragraphs_kept: u64,
    pub dropped_by_rule: BTreeMap<String, u64>,
}

impl CorpusStats {
    pub fn dropped_total(&self) -> u64 {
        self.dropped_by_rule.values().sum()
    }
}

/// Well-formed records plus every rejected line.
#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<DocRecord>,
    pub errors: Vec<LineError>,
}

/// Parse a line-delimited record stream. Malformed lines (bad JSON, empty
/// title, duplicate id) are collected with their line numbers; only I/O
/// failures abort.
pub fn parse_records(reader: impl BufRead) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(LineError::new(line_no, e.to_string()));
                continue;
            }
        };
        if record.id.trim().is_empty() {
            out.errors.push(LineError::new(line_no, "empty id"));
            continue;
        }
        if record.title.trim().is_empty() {
            out.errors.push(LineError::new(line_no, "empty title"));
            continue;
        }
        match seen.get(&record.id) {
            Some(&first) => {
                out.errors.push(LineError::new(
                    line_no,
                    Error::DuplicateId {
                        id: record.id.clone(),
                        first,
                        second: line_no,
                    }
                    .to_string(),
                ));
            }
            None => {
                seen.insert(record.id.clone(), line_no);
                out.records.push(record);
            }
        }
    }
    Ok(out)
}

/// Parse a corpus file, failing on the first malformed line instead of
/// collecting. Convenience for stages that require a clean corpus.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<DocRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let outcome = parse_records(std::io::BufReader::new(file))?;
    if let Some(err) = outcome.errors.first() {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            line: err.line,
            message: err.message.clone(),
        });
    }
    Ok(outcome.records)
}

/// Serialize records one JSON object per line.
pub fn write_records(mut writer: impl Write, records: &[DocRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterRules {
    pub drop_person: bool,
    pub drop_organization: bool,
    pub drop_year: bool,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            drop_person: true,
            drop_organization: true,
            drop_year: true,
        }
    }
}

/// A title counts as a year iff it is a bare 3-4 digit integer after
/// trimming ("1987", "476").
pub fn is_year_title(title: &str) -> bool {
    let t = title.trim();
    (3..=4).contains(&t.chars().count()) && t.chars().all(|c| c.is_ascii_digit())
}

/// Drop person/organization/year pages. Pure: input order is preserved and
/// every drop is counted under exactly one rule.
pub fn filter_records(records: Vec<DocRecord>, rules: &FilterRules) -> (Vec<DocRecord>, CorpusStats) {
    let mut stats = CorpusStats {
        records_in: records.len() as u64,
        ..CorpusStats::default()
    };
    let mut kept = Vec::with_capacity(records.len());
    for record in records {
        let dropped_under = if rules.drop_person && record.meta.is_person {
            Some("person")
        } else if rules.drop_organization && record.meta.is_organization {
            Some("organization")
        } else if rules.drop_year && (record.meta.is_year || is_year_title(&record.title)) {
            Some("year")
        } else {
            None
        };
        match dropped_under {
            Some(rule) => *stats.dropped_by_rule.entry(rule.into()).or_insert(0) += 1,
            None => {
                stats.paragraphs_kept += record.paragraphs.len() as u64;
                kept.push(record);
            }
        }
    }
    stats.records_kept = kept.len() as u64;
    (kept, stats)
}

/// Whitespace-delimited word count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// `(title, paragraph)` pairs for every paragraph of at least `min_words`
/// words, keeping paragraph text verbatim.
pub fn extract_paragraphs(record: &DocRecord, min_words: usize) -> Vec<(String, String)> {
    record
        .paragraphs
        .iter()
        .filter(|p| word_count(p) >= min_words)
        .map(|p| (record.title.clone(), p.clone()))
        .collect()
}

/// In-place variant of the ingest pruning step: drops paragraphs shorter
/// than `min_words`, then drops records left without any paragraph and
/// counts them in `stats` under `"empty"`.
pub fn prune_short_paragraphs(
    records: Vec<DocRecord>,
    min_words: usize,
    stats: &mut CorpusStats,
) -> Vec<DocRecord> {
    let mut kept = Vec::with_capacity(records.len());
    let mut paragraphs = 0u64;
    for mut record in records {
        record.paragraphs.retain(|p| word_count(p) >= min_words);
        if record.paragraphs.is_empty() {
            *stats.dropped_by_rule.entry("empty".into()).or_insert(0) += 1;
        } else {
            paragraphs += record.paragraphs.len() as u64;
            kept.push(record);
        }
    }
    stats.records_kept = kept.len() as u64;
    stats.paragraphs_kept = paragraphs;
    kept
}
