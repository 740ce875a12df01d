//! Cue-masking strategies.
//!
//! Given a question paragraph and its option set, these functions hide the
//! spans that would give the correct option away. Three strategies:
//!
//! * `token_naive`: mask every subword piece of the question that occurs
//!   among the correct option's pieces.
//! * `word_naive`: mask every word of the question whose normalized form
//!   is a word of the correct option.
//! * `prob_matching`: mask a correct-option word `w` with probability
//!   `1 / |{options containing w}|`, so the masking likelihood of `w` is
//!   identical whichever containing option is the correct one.
//!
//! Every strategy returns the masked text together with a [`MaskPlan`]
//! recording exactly what was hidden, where, and with what probability.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tokenizer::{self, SubwordVocab, WordSpan};
use crate::Rational;

/// Default replacement for masked spans.
pub const DEFAULT_SENTINEL: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TokenNaive,
    WordNaive,
    ProbMatching,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::TokenNaive => "token_naive",
            Strategy::WordNaive => "word_naive",
            Strategy::ProbMatching => "prob_matching",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskUnit {
    Word,
    Token,
}

/// One masked region of the original paragraph. `hidden` is the surface the
/// sentinel replaced; `p_applied` the masking probability that was in force
/// (always 1 for the naive strategies) and `coin` whether the draw fired
/// (always true for spans that made it into the plan).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpan {
    pub start: usize,
    pub end: usize,
    pub unit: MaskUnit,
    pub hidden: String,
    pub p_applied: Rational,
    pub coin: bool,
}

/// Per-word-type masking decision under `prob_matching`: the word occurs in
/// `k` of the options, was assigned probability `p = 1/k`, and `coin` says
/// whether all its occurrences were masked. The naive word strategy records
/// its unconditional decisions as `k = 1, p = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateWord {
    pub word: String,
    pub k: u64,
    pub p: Rational,
    pub coin: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedMaterial {
    pub seed: u64,
    pub example_id: String,
}

/// Complete record of one masking pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub strategy: Strategy,
    pub spans: Vec<MaskSpan>,
    pub candidate_words: Vec<CandidateWord>,
    pub seed_material: SeedMaterial,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskOutcome {
    pub text: String,
    pub plan: MaskPlan,
}

/// Shared inputs of a masking pass. The seed and example id key the
/// Bernoulli streams of `prob_matching`; the naive strategies record them
/// in the plan but never draw.
#[derive(Debug, Clone, Copy)]
pub struct MaskContext<'a> {
    pub sentinel: &'a str,
    pub seed: u64,
    pub example_id: &'a str,
}

impl<'a> MaskContext<'a> {
    pub fn new(sentinel: &'a str, seed: u64, example_id: &'a str) -> Self {
        Self {
            sentinel,
            seed,
            example_id,
        }
    }

    fn seed_material(&self) -> SeedMaterial {
        SeedMaterial {
            seed: self.seed,
            example_id: self.example_id.to_string(),
        }
    }
}

/// Probability-matching mask probability of word `w`:
/// `1 / |{O_i : w in words(O_i)}|`, exact.
///
/// `w` must be normalized and occur in at least one option.
pub fn mask_probability(w: &str, options: &[impl AsRef<str>]) -> Result<Rational> {
    let k = options
        .iter()
        .filter(|o| tokenizer::word_types(o.as_ref()).contains(w))
        .count() as u64;
    if k == 0 {
        return Err(Error::WordNotInOptions(w.to_string()));
    }
    Ok(Rational::new(1, k))
}

/// Splice `sentinel` over every span of `text`. Spans must be sorted and
/// non-overlapping; offsets are char offsets.
pub fn apply_spans(text: &str, spans: &[MaskSpan], sentinel: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    for span in spans {
        debug_assert!(span.start >= pos && span.end <= chars.len());
        out.extend(&chars[pos..span.start]);
        out.push_str(sentinel);
        pos = span.end;
    }
    out.extend(&chars[pos..]);
    out
}

/// Distinct normalized words of `text` in first-occurrence order.
fn ordered_word_types(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for span in tokenizer::word_tokenize(text) {
        if span.is_word() && seen.insert(span.norm.clone()) {
            out.push(span.norm);
        }
    }
    out
}

fn word_spans_to_mask(q_spans: &[WordSpan], masked_types: &HashSet<&str>) -> Vec<MaskSpan> {
    q_spans
        .iter()
        .filter(|s| s.is_word() && masked_types.contains(s.norm.as_str()))
        .map(|s| MaskSpan {
            start: s.start,
            end: s.end,
            unit: MaskUnit::Word,
            hidden: s.surface.clone(),
            p_applied: Rational::new(1, 1),
            coin: true,
        })
        .collect()
}

/// Mask every question word whose normalized form occurs in the correct
/// option. Punctuation is never a candidate.
pub fn mask_word_naive(q: &str, correct_option: &str, ctx: &MaskContext) -> MaskOutcome {
    let q_spans = tokenizer::word_tokenize(q);
    let q_types: HashSet<String> = q_spans
        .iter()
        .filter(|s| s.is_word())
        .map(|s| s.norm.clone())
        .collect();

    let mut masked: HashSet<&str> = HashSet::new();
    let mut candidates = Vec::new();
    for word in ordered_word_types(correct_option) {
        if q_types.contains(&word) {
            candidates.push(CandidateWord {
                word,
                k: 1,
                p: Rational::new(1, 1),
                coin: true,
            });
        }
    }
    for c in &candidates {
        masked.insert(c.word.as_str());
    }

    let spans = word_spans_to_mask(&q_spans, &masked);
    MaskOutcome {
        text: apply_spans(q, &spans, ctx.sentinel),
        plan: MaskPlan {
            strategy: Strategy::WordNaive,
            spans,
            candidate_words: candidates,
            seed_material: ctx.seed_material(),
        },
    }
}

/// Mask every question token whose piece occurs among the correct option's
/// pieces. Piece comparison is case-folded, mirroring the normalized
/// matching used at word level; one sentinel replaces each token.
pub fn mask_token_naive(
    q: &str,
    correct_option: &str,
    vocab: &SubwordVocab,
    ctx: &MaskContext,
) -> Result<MaskOutcome> {
    let correct_pieces: HashSet<String> = tokenizer::subword_tokenize(correct_option, vocab)?
        .into_iter()
        .map(|t| t.piece.to_lowercase())
        .collect();

    let q_chars: Vec<char> = q.chars().collect();
    let mut spans = Vec::new();
    for token in tokenizer::subword_tokenize(q, vocab)? {
        if correct_pieces.contains(&token.piece.to_lowercase()) {
            spans.push(MaskSpan {
                start: token.start,
                end: token.end,
                unit: MaskUnit::Token,
                hidden: q_chars[token.start..token.end].iter().collect(),
                p_applied: Rational::new(1, 1),
                coin: true,
            });
        }
    }
    Ok(MaskOutcome {
        text: apply_spans(q, &spans, ctx.sentinel),
        plan: MaskPlan {
            strategy: Strategy::TokenNaive,
            spans,
            candidate_words: Vec::new(),
            seed_material: ctx.seed_material(),
        },
    })
}

/// Probability-matching masking. For each correct-option word `w` present
/// in the question, draw one Bernoulli(`1/k`) from a stream keyed by
/// `(seed, example id, w)`, with `k` counting the options that contain
/// `w`, and mask either all of `w`'s occurrences or none. Words appearing
/// only in incorrect options are left alone.
pub fn mask_prob_matching(
    q: &str,
    options: &[impl AsRef<str>],
    correct_index: usize,
    ctx: &MaskContext,
) -> MaskOutcome {
    assert!(correct_index < options.len(), "correct_index out of range");
    let q_spans = tokenizer::word_tokenize(q);
    let q_types: HashSet<String> = q_spans
        .iter()
        .filter(|s| s.is_word())
        .map(|s| s.norm.clone())
        .collect();
    let option_types: Vec<HashSet<String>> = options
        .iter()
        .map(|o| tokenizer::word_types(o.as_ref()))
        .collect();

    let mut candidates = Vec::new();
    let mut masked: HashSet<String> = HashSet::new();
    for word in ordered_word_types(options[correct_index].as_ref()) {
        if !q_types.contains(&word) {
            continue;
        }
        let k = option_types.iter().filter(|t| t.contains(&word)).count() as u64;
        debug_assert!(k >= 1, "correct option must contain its own words");
        let mut rng = stream(ctx.seed, &[ctx.example_id, "mask", &word]);
        // gen_range is rejection-sampled, so the coin is exactly 1/k.
        let coin = rng.gen_range(0..k) == 0;
        if coin {
            masked.insert(word.clone());
        }
        candidates.push(CandidateWord {
            word,
            k,
            p: Rational::new(1, k),
            coin,
        });
    }

    let masked_refs: HashSet<&str> = masked.iter().map(String::as_str).collect();
    let mut spans = word_spans_to_mask(&q_spans, &masked_refs);
    for span in &mut spans {
        let c = candidates
            .iter()
            .find(|c| c.word == tokenizer::normalize(&span.hidden))
            .expect("masked span has a candidate");
        span.p_applied = c.p;
    }

    MaskOutcome {
        text: apply_spans(q, &spans, ctx.sentinel),
        plan: MaskPlan {
            strategy: Strategy::ProbMatching,
            spans,
            candidate_words: candidates,
            seed_material: ctx.seed_material(),
        },
    }
}

/// Dispatch on strategy. `vocab` is only consulted by `token_naive`.
pub fn mask(
    strategy: Strategy,
    q: &str,
    options: &[impl AsRef<str>],
    correct_index: usize,
    vocab: Option<&SubwordVocab>,
    ctx: &MaskContext,
) -> Result<MaskOutcome> {
    match strategy {
        Strategy::WordNaive => Ok(mask_word_naive(q, options[correct_index].as_ref(), ctx)),
        Strategy::TokenNaive => {
            let vocab = vocab.ok_or_else(|| {
                Error::InvalidInput("token_naive masking requires a vocabulary".into())
            })?;
            mask_token_naive(q, options[correct_index].as_ref(), vocab, ctx)
        }
        Strategy::ProbMatching => Ok(mask_prob_matching(q, options, correct_index, ctx)),
    }
}
