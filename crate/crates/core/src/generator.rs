//! End-to-end dataset generation: corpus paragraphs become questions, page
//! titles become correct options, graph and retrieval supply distractors,
//! and the configured masking strategy hides the cues.
//!
//! Generation is a pure function of `(corpus, diffdx, index, config)`:
//! every random decision is keyed on `(seed, example id)`, so output is
//! byte-identical across runs and thread counts.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{word_count, DocRecord};
use crate::distractors::{
    assemble_options, retrieve_distractors, DiffDxGraph, OptionProvenance, OptionSet, QueryMode,
};
use crate::error::{Error, Result};
use crate::masking::{self, MaskContext, MaskPlan, Strategy, DEFAULT_SENTINEL};
use crate::retrieval::Bm25Index;
use crate::scalar::Scalar;
use crate::tokenizer::SubwordVocab;

/// One generated multiple-choice example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqaExample {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    pub correct_index: usize,
    pub provenance: Provenance,
}

/// Everything needed to trace an example back to its sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub paragraph_index: usize,
    pub strategy: Strategy,
    pub seed: u64,
    /// The unmasked paragraph; mask-plan offsets refer to it.
    pub original: String,
    pub mask_plan: MaskPlan,
    pub option_provenance: Vec<OptionProvenance>,
}

impl McqaExample {
    /// Check the structural invariants every emitted example satisfies.
    pub fn validate(&self) -> Result<()> {
        if self.question.is_empty() {
            return Err(Error::InvalidInput(format!("{}: empty question", self.id)));
        }
        if self.options.len() < 2 {
            return Err(Error::InvalidInput(format!("{}: fewer than two options", self.id)));
        }
        if self.correct_index >= self.options.len() {
            return Err(Error::InvalidInput(format!(
                "{}: correct_index {} out of range",
                self.id, self.correct_index
            )));
        }
        let normed: HashSet<String> = self
            .options
            .iter()
            .map(|o| crate::tokenizer::normalize(o.trim()))
            .collect();
        if normed.len() != self.options.len() {
            return Err(Error::InvalidInput(format!("{}: duplicate options", self.id)));
        }
        if self.provenance.option_provenance.len() != self.options.len() {
            return Err(Error::InvalidInput(format!("{}: provenance length mismatch", self.id)));
        }
        let titles = self
            .provenance
            .option_provenance
            .iter()
            .filter(|&&p| p == OptionProvenance::Title)
            .count();
        if titles != 1 || self.provenance.option_provenance[self.correct_index] != OptionProvenance::Title
        {
            return Err(Error::InvalidInput(format!("{}: bad correct-option provenance", self.id)));
        }
        let original_chars: Vec<char> = self.provenance.original.chars().collect();
        let mut last_end = 0;
        for span in &self.provenance.mask_plan.spans {
            if span.start < last_end || span.end > original_chars.len() || span.start >= span.end {
                return Err(Error::InvalidInput(format!("{}: bad mask span", self.id)));
            }
            let hidden: String = original_chars[span.start..span.end].iter().collect();
            if hidden != span.hidden {
                return Err(Error::InvalidInput(format!(
                    "{}: mask span surface mismatch at {}..{}",
                    self.id, span.start, span.end
                )));
            }
            last_end = span.end;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub strategy: Strategy,
    pub n_distractors: usize,
    pub min_words: usize,
    pub seed: u64,
    pub sentinel: String,
    pub query_mode: QueryMode,
    /// Concatenate all kept paragraphs of a page into one example instead
    /// of one example per paragraph.
    pub per_page: bool,
}

impl GenConfig {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        Self {
            strategy,
            n_distractors: 7,
            min_words: 30,
            seed,
            sentinel: DEFAULT_SENTINEL.to_string(),
            query_mode: QueryMode::default(),
            per_page: false,
        }
    }
}

/// Deterministic example id for `(doc, paragraph)`.
pub fn example_id(doc_id: &str, paragraph_index: usize) -> String {
    format!("{doc_id}#p{paragraph_index}")
}

/// Apply the configured masking to one paragraph against its option set.
pub fn generate_example(
    doc: &DocRecord,
    paragraph_index: usize,
    option_set: OptionSet,
    config: &GenConfig,
    vocab: Option<&SubwordVocab>,
) -> Result<McqaExample> {
    let paragraph = doc
        .paragraphs
        .get(paragraph_index)
        .ok_or_else(|| Error::InvalidInput(format!("{}: no paragraph {paragraph_index}", doc.id)))?;
    build_example(
        doc,
        paragraph_index,
        paragraph.clone(),
        option_set,
        config,
        vocab,
    )
}

fn build_example(
    doc: &DocRecord,
    paragraph_index: usize,
    paragraph: String,
    option_set: OptionSet,
    config: &GenConfig,
    vocab: Option<&SubwordVocab>,
) -> Result<McqaExample> {
    let id = example_id(&doc.id, paragraph_index);
    let ctx = MaskContext::new(&config.sentinel, config.seed, &id);
    let outcome = masking::mask(
        config.strategy,
        &paragraph,
        &option_set.options,
        option_set.correct_index,
        vocab,
        &ctx,
    )?;
    Ok(McqaExample {
        id,
        question: outcome.text,
        options: option_set.options,
        correct_index: option_set.correct_index,
        provenance: Provenance {
            doc_id: doc.id.clone(),
            paragraph_index,
            strategy: config.strategy,
            seed: config.seed,
            original: paragraph,
            mask_plan: outcome.plan,
            option_provenance: option_set.provenance,
        },
    })
}

/// Per-run accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub records_in: u64,
    pub paragraphs_in: u64,
    pub paragraphs_below_min_words: u64,
    pub examples_out: u64,
    /// error kind -> count of skipped examples
    pub skipped: BTreeMap<String, u64>,
}

fn skip_kind(err: &Error) -> &'static str {
    match err {
        Error::InsufficientDistractors { .. } => "insufficient_distractors",
        Error::UnknownChar(_) => "vocab_gap",
        _ => "other",
    }
}

/// Generate one example per surviving `(doc, paragraph)` pair, in input
/// order. Per-example failures are counted and skipped; only configuration
/// problems abort.
pub fn generate_dataset<S: Scalar>(
    corpus: &[DocRecord],
    diffdx: &DiffDxGraph,
    index: &Bm25Index<S>,
    config: &GenConfig,
    vocab: Option<&SubwordVocab>,
) -> Result<(Vec<McqaExample>, RunReport)> {
    if config.strategy == Strategy::TokenNaive && vocab.is_none() {
        return Err(Error::InvalidInput(
            "token_naive masking requires a vocabulary".into(),
        ));
    }
    if config.n_distractors < 1 {
        return Err(Error::InvalidInput("n_distractors must be at least 1".into()));
    }

    struct RecordOutput {
        examples: Vec<McqaExample>,
        paragraphs_in: u64,
        short: u64,
        skipped: BTreeMap<String, u64>,
    }

    let per_record: Vec<RecordOutput> = corpus
        .par_iter()
        .map(|record| {
            let mut out = RecordOutput {
                examples: Vec::new(),
                paragraphs_in: record.paragraphs.len() as u64,
                short: 0,
                skipped: BTreeMap::new(),
            };
            let kept: Vec<(usize, &String)> = record
                .paragraphs
                .iter()
                .enumerate()
                .filter(|(_, p)| word_count(p) >= config.min_words)
                .collect();
            out.short = record.paragraphs.len() as u64 - kept.len() as u64;
            if kept.is_empty() {
                return out;
            }

            let lead = kept[0].1;
            // Retrieve enough titles to fill even if every diffdx entry is
            // also retrieved.
            let pool = config.n_distractors + diffdx.diffdx_for(&record.title).len();
            let retrieved = retrieve_distractors(
                &record.title,
                lead,
                index,
                pool,
                &HashSet::new(),
                config.query_mode,
            );

            let jobs: Vec<(usize, String)> = if config.per_page {
                let joined = kept
                    .iter()
                    .map(|(_, p)| p.as_str())
                    .collect::<Vec<_>>()
                    .join("\n\n");
                vec![(0, joined)]
            } else {
                kept.into_iter().map(|(i, p)| (i, p.clone())).collect()
            };

            for (paragraph_index, paragraph) in jobs {
                let id = example_id(&record.id, paragraph_index);
                let result = assemble_options(
                    &record.title,
                    diffdx,
                    &retrieved,
                    config.n_distractors,
                    config.seed,
                    &id,
                )
                .and_then(|options| {
                    build_example(record, paragraph_index, paragraph, options, config, vocab)
                });
                match result {
                    Ok(example) => out.examples.push(example),
                    Err(err) => {
                        *out.skipped.entry(skip_kind(&err).to_string()).or_insert(0) += 1;
                    }
                }
            }
            out
        })
        .collect();

    let mut report = RunReport {
        records_in: corpus.len() as u64,
        ..RunReport::default()
    };
    let mut dataset = Vec::new();
    for record_out in per_record {
        report.paragraphs_in += record_out.paragraphs_in;
        report.paragraphs_below_min_words += record_out.short;
        for (kind, count) in record_out.skipped {
            *report.skipped.entry(kind).or_insert(0) += count;
        }
        dataset.extend(record_out.examples);
    }
    report.examples_out = dataset.len() as u64;
    Ok((dataset, report))
}

/// Write examples as JSON lines.
pub fn write_dataset(mut writer: impl Write, examples: &[McqaExample]) -> Result<()> {
    for example in examples {
        serde_json::to_writer(&mut writer, example).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_dataset_file(path: impl AsRef<Path>, examples: &[McqaExample]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(&mut file, examples)
}

/// Read a dataset, validating every example. Schema violations carry the
/// offending line number.
pub fn read_dataset(reader: impl BufRead, source: &str) -> Result<Vec<McqaExample>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let example: McqaExample =
            serde_json::from_str(&line).map_err(|e| Error::Malformed {
                path: source.to_string(),
                line: line_no,
                message: e.to_string(),
            })?;
        example.validate().map_err(|e| Error::Malformed {
            path: source.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(example);
    }
    Ok(out)
}

pub fn read_dataset_file(path: impl AsRef<Path>) -> Result<Vec<McqaExample>> {
    let path = path.as_ref();
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_dataset(file, &path.display().to_string())
}
