//! Word- and subword-level tokenization with exact character spans.
//!
//! Offsets are in characters (not bytes) and every span records the surface
//! it covers, so masking can splice replacement text back into the original
//! paragraph without drift. A "word" is a maximal alphanumeric run; every
//! other non-whitespace character is its own punctuation span.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

/// Marker prefix for continuation pieces in the subword vocabulary.
pub const CONTINUATION_PREFIX: &str = "##";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Word,
    Punctuation,
}

/// One word or punctuation span. `start..end` are char offsets into the
/// tokenized text; `surface` is the covered text and `norm` its lowercase
/// form used for all equality tests downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub norm: String,
    pub kind: SpanKind,
}

impl WordSpan {
    pub fn is_word(&self) -> bool {
        self.kind == SpanKind::Word
    }
}

/// One subword piece. `piece` is the vocabulary entry (continuation pieces
/// keep their `##` prefix); `word_index` points at the enclosing word span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
    pub piece: String,
    pub word_index: usize,
}

/// Unicode-aware lowercasing; the single normalization used for word
/// equality everywhere in the pipeline.
pub fn normalize(surface: &str) -> String {
    surface.to_lowercase()
}

/// Split `text` into word and punctuation spans covering every
/// non-whitespace character, in order.
pub fn word_tokenize(text: &str) -> Vec<WordSpan> {
    let mut spans = Vec::new();
    let mut word_start: Option<usize> = None;
    let mut buf = String::new();

    let flush =
        |spans: &mut Vec<WordSpan>, start: Option<usize>, end: usize, buf: &mut String| {
            if let Some(start) = start {
                spans.push(WordSpan {
                    start,
                    end,
                    surface: buf.clone(),
                    norm: normalize(buf),
                    kind: SpanKind::Word,
                });
                buf.clear();
            }
        };

    for (i, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            if word_start.is_none() {
                word_start = Some(i);
            }
            buf.push(ch);
        } else {
            flush(&mut spans, word_start.take(), i, &mut buf);
            if !ch.is_whitespace() {
                let surface = ch.to_string();
                spans.push(WordSpan {
                    start: i,
                    end: i + 1,
                    norm: normalize(&surface),
                    surface,
                    kind: SpanKind::Punctuation,
                });
            }
        }
    }
    let total = text.chars().count();
    flush(&mut spans, word_start.take(), total, &mut buf);
    spans
}

/// Normalized set of word types in `text` (punctuation excluded).
pub fn word_types(text: &str) -> HashSet<String> {
    word_tokenize(text)
        .into_iter()
        .filter(WordSpan::is_word)
        .map(|s| s.norm)
        .collect()
}

/// Subword vocabulary: plain entries start pieces, `##`-prefixed entries
/// continue a word.
#[derive(Debug, Clone)]
pub struct SubwordVocab {
    entries: HashSet<String>,
    max_piece_chars: usize,
}

impl SubwordVocab {
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = HashSet::new();
        for entry in entries {
            let entry = entry.into();
            if entry.is_empty() || entry == CONTINUATION_PREFIX {
                return Err(Error::InvalidVocab(format!("empty entry `{entry}`")));
            }
            set.insert(entry);
        }
        if set.is_empty() {
            return Err(Error::InvalidVocab("no entries".into()));
        }
        let max_piece_chars = set
            .iter()
            .map(|e| {
                e.strip_prefix(CONTINUATION_PREFIX)
                    .unwrap_or(e)
                    .chars()
                    .count()
            })
            .max()
            .unwrap_or(0);
        Ok(Self {
            entries: set,
            max_piece_chars,
        })
    }

    /// One entry per line; blank lines ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut entries = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if !line.is_empty() {
                entries.push(line.to_string());
            }
        }
        Self::new(entries)
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.entries.contains(piece)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Greedy longest-match decomposition of every word span into vocabulary
/// pieces. Punctuation spans map to their single character, which must be
/// in the vocabulary like any other piece.
pub fn subword_tokenize(text: &str, vocab: &SubwordVocab) -> Result<Vec<TokenSpan>> {
    let words = word_tokenize(text);
    let mut tokens = Vec::new();
    for (word_index, span) in words.iter().enumerate() {
        match span.kind {
            SpanKind::Punctuation => {
                if !vocab.contains(&span.surface) {
                    return Err(Error::UnknownChar(span.surface.chars().next().unwrap()));
                }
                tokens.push(TokenSpan {
                    start: span.start,
                    end: span.end,
                    piece: span.surface.clone(),
                    word_index,
                });
            }
            SpanKind::Word => {
                let chars: Vec<char> = span.surface.chars().collect();
                let mut pos = 0;
                while pos < chars.len() {
                    let limit = vocab.max_piece_chars.min(chars.len() - pos);
                    let mut matched = None;
                    for len in (1..=limit).rev() {
                        let body: String = chars[pos..pos + len].iter().collect();
                        let candidate = if pos == 0 {
                            body
                        } else {
                            format!("{CONTINUATION_PREFIX}{body}")
                        };
                        if vocab.contains(&candidate) {
                            matched = Some((candidate, len));
                            break;
                        }
                    }
                    let Some((piece, len)) = matched else {
                        return Err(Error::UnknownChar(chars[pos]));
                    };
                    tokens.push(TokenSpan {
                        start: span.start + pos,
                        end: span.start + pos + len,
                        piece,
                        word_index,
                    });
                    pos += len;
                }
            }
        }
    }
    Ok(tokens)
}
