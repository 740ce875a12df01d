//! Leakage auditing.
//!
//! A masked dataset should not let a shallow model recover the correct
//! option from surface cues alone. The audit instantiates that adversary
//! concretely: a linear softmax-over-options classifier on four
//! presence/absence features, trained by full-batch gradient descent. Its
//! eval accuracy is compared against chance, and extraneous-masking
//! statistics (masked punctuation, masked ubiquitous words) are counted per
//! strategy.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::McqaExample;
use crate::rng::fnv1a64;
use crate::scalar::Scalar;
use crate::tokenizer;

pub const FEATURE_DIM: usize = 4;

/// Minimum eval-split size accepted by [`audit_dataset`].
pub const MIN_EVAL_EXAMPLES: usize = 50;

/// Per-option cue features. `unmasked_overlap + absent == option_len`;
/// `mask_count` is shared by every option of an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueFeatures {
    pub unmasked_overlap: u32,
    pub absent: u32,
    pub option_len: u32,
    pub mask_count: u32,
}

impl CueFeatures {
    pub fn to_array<S: Scalar>(self) -> [S; FEATURE_DIM] {
        [
            S::from_u32(self.unmasked_overlap).unwrap(),
            S::from_u32(self.absent).unwrap(),
            S::from_u32(self.option_len).unwrap(),
            S::from_u32(self.mask_count).unwrap(),
        ]
    }
}

/// Char ranges of non-overlapping `sentinel` occurrences in `text`.
fn sentinel_ranges(text: &str, sentinel: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let needle: Vec<char> = sentinel.chars().collect();
    if needle.is_empty() {
        return Vec::new();
    }
    let mut ranges = Vec::new();
    let mut i = 0;
    while i + needle.len() <= chars.len() {
        if chars[i..i + needle.len()] == needle[..] {
            ranges.push((i, i + needle.len()));
            i += needle.len();
        } else {
            i += 1;
        }
    }
    ranges
}

/// Word types of the question that sit outside every sentinel occurrence.
fn unmasked_word_types(question: &str, sentinel: &str) -> (HashSet<String>, u32) {
    let ranges = sentinel_ranges(question, sentinel);
    let overlaps = |start: usize, end: usize| {
        ranges.iter().any(|&(s, e)| start < e && s < end)
    };
    let types = tokenizer::word_tokenize(question)
        .into_iter()
        .filter(|sp| sp.is_word() && !overlaps(sp.start, sp.end))
        .map(|sp| sp.norm)
        .collect();
    (types, ranges.len() as u32)
}

/// One [`CueFeatures`] per option, from normalized word matching. Mask
/// sentinels never count as words.
pub fn extract_cue_features(example: &McqaExample, sentinel: &str) -> Vec<CueFeatures> {
    let (unmasked, mask_count) = unmasked_word_types(&example.question, sentinel);
    example
        .options
        .iter()
        .map(|option| {
            let types = tokenizer::word_types(option);
            let option_len = types.len() as u32;
            let unmasked_overlap =
                types.iter().filter(|t| unmasked.contains(t.as_str())).count() as u32;
            CueFeatures {
                unmasked_overlap,
                absent: option_len - unmasked_overlap,
                option_len,
                mask_count,
            }
        })
        .collect()
}

/// `(per-option features, correct index)` pairs ready for training.
pub type LabeledFeatures = (Vec<CueFeatures>, usize);

/// Feature extraction is per-example pure; run it in parallel, preserving
/// dataset order.
pub fn featurize(dataset: &[McqaExample], sentinel: &str) -> Vec<LabeledFeatures> {
    dataset
        .par_iter()
        .map(|e| (extract_cue_features(e, sentinel), e.correct_index))
        .collect()
}

/// Linear softmax-over-options model on [`CueFeatures`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueClassifier<S: Scalar> {
    pub weights: [S; FEATURE_DIM],
    pub bias: S,
    pub epochs: usize,
    pub learning_rate: S,
    pub seed: u64,
}

impl<S: Scalar> CueClassifier<S> {
    fn score(&self, features: CueFeatures) -> S {
        let x = features.to_array::<S>();
        let mut s = self.bias;
        for (w, v) in self.weights.iter().zip(x) {
            s = s + *w * v;
        }
        s
    }

    /// Argmax over option scores, ties to the lowest index.
    pub fn predict(&self, options: &[CueFeatures]) -> usize {
        let mut best = 0;
        let mut best_score = self.score(options[0]);
        for (i, &f) in options.iter().enumerate().skip(1) {
            let s = self.score(f);
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        best
    }

    pub fn accuracy(&self, data: &[LabeledFeatures]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data
            .iter()
            .filter(|(options, label)| self.predict(options) == *label)
            .count();
        correct as f64 / data.len() as f64
    }
}

fn softmax<S: Scalar>(scores: &[S]) -> Vec<S> {
    let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean negative log-likelihood of the correct options.
pub fn log_loss<S: Scalar>(weights: &[S; FEATURE_DIM], bias: S, data: &[LabeledFeatures]) -> S {
    let model = CueClassifier {
        weights: *weights,
        bias,
        epochs: 0,
        learning_rate: S::zero(),
        seed: 0,
    };
    let mut total = S::zero();
    for (options, label) in data {
        let scores: Vec<S> = options.iter().map(|&f| model.score(f)).collect();
        let probs = softmax(&scores);
        total = total - probs[*label].ln();
    }
    total / S::from_usize(data.len()).unwrap()
}

/// Analytic gradient of [`log_loss`] in `(weights, bias)`.
pub fn log_loss_gradient<S: Scalar>(
    weights: &[S; FEATURE_DIM],
    bias: S,
    data: &[LabeledFeatures],
) -> ([S; FEATURE_DIM], S) {
    let model = CueClassifier {
        weights: *weights,
        bias,
        epochs: 0,
        learning_rate: S::zero(),
        seed: 0,
    };
    let mut grad_w = [S::zero(); FEATURE_DIM];
    let mut grad_b = S::zero();
    for (options, label) in data {
        let scores: Vec<S> = options.iter().map(|&f| model.score(f)).collect();
        let probs = softmax(&scores);
        for (i, &f) in options.iter().enumerate() {
            let residual = if i == *label { probs[i] - S::one() } else { probs[i] };
            let x = f.to_array::<S>();
            for (g, v) in grad_w.iter_mut().zip(x) {
                *g = *g + residual * v;
            }
            grad_b = grad_b + residual;
        }
    }
    let n = S::from_usize(data.len()).unwrap();
    for g in grad_w.iter_mut() {
        *g = *g / n;
    }
    (grad_w, grad_b / n)
}

/// Full-batch gradient descent on the log loss from a zero init, so zero
/// epochs means uniform predictions. The loss is convex; the optimizer is
/// deterministic and `seed` is carried as training metadata only.
pub fn train_cue_classifier<S: Scalar>(
    data: &[LabeledFeatures],
    epochs: usize,
    learning_rate: S,
    seed: u64,
) -> CueClassifier<S> {
    let mut weights = [S::zero(); FEATURE_DIM];
    let mut bias = S::zero();
    if data.is_empty() {
        return CueClassifier {
            weights,
            bias,
            epochs,
            learning_rate,
            seed,
        };
    }
    for _ in 0..epochs {
        let (grad_w, grad_b) = log_loss_gradient(&weights, bias, data);
        for (w, g) in weights.iter_mut().zip(grad_w) {
            *w = *w - learning_rate * g;
        }
        bias = bias - learning_rate * grad_b;
    }
    CueClassifier {
        weights,
        bias,
        epochs,
        learning_rate,
        seed,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraneousStats {
    pub masked_spans: u64,
    /// Masked spans whose hidden surface has no alphanumeric character.
    pub masked_punctuation: u64,
    /// Masked spans hiding a top-decile document-frequency word.
    pub masked_high_freq: u64,
}

impl ExtraneousStats {
    pub fn extraneous_total(&self) -> u64 {
        self.masked_punctuation + self.masked_high_freq
    }
}

/// Words in the top decile of document frequency over the dataset's
/// original paragraphs (ties broken lexicographically).
pub fn high_frequency_words(dataset: &[McqaExample]) -> HashSet<String> {
    let mut df: HashMap<String, u64> = HashMap::new();
    for example in dataset {
        for word in tokenizer::word_types(&example.provenance.original) {
            *df.entry(word).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let cutoff = ranked.len().div_ceil(10);
    ranked.into_iter().take(cutoff).map(|(w, _)| w).collect()
}

/// Per-strategy extraneous-masking counts over the whole dataset.
pub fn extraneous_stats(dataset: &[McqaExample]) -> BTreeMap<String, ExtraneousStats> {
    let high_freq = high_frequency_words(dataset);
    let mut out: BTreeMap<String, ExtraneousStats> = BTreeMap::new();
    for example in dataset {
        let entry = out
            .entry(example.provenance.strategy.name().to_string())
            .or_default();
        for span in &example.provenance.mask_plan.spans {
            entry.masked_spans += 1;
            if !span.hidden.chars().any(char::is_alphanumeric) {
                entry.masked_punctuation += 1;
            }
            if high_freq.contains(&tokenizer::normalize(&span.hidden)) {
                entry.masked_high_freq += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport<S: Scalar> {
    /// What the adversary is, spelled out so report readers know exactly
    /// which cue classifier the accuracy refers to.
    pub adversary: String,
    pub accuracy: f64,
    pub chance: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub weights: [S; FEATURE_DIM],
    pub bias: S,
    pub extraneous: BTreeMap<String, ExtraneousStats>,
}

#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub split_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub sentinel: String,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            split_fraction: 0.8,
            epochs: 500,
            learning_rate: 0.1,
            seed: 0,
            sentinel: crate::masking::DEFAULT_SENTINEL.to_string(),
        }
    }
}

/// True iff the example lands in the training split. The split hashes the
/// example id only, so it is stable across runs and seeds.
pub fn in_train_split(example_id: &str, split_fraction: f64) -> bool {
    let bucket = fnv1a64(example_id.as_bytes()) % 10_000;
    (bucket as f64) < split_fraction * 10_000.0
}

/// Train the cue adversary on the train split, measure accuracy on the
/// eval split, and count extraneous masking over the whole dataset.
pub fn audit_dataset<S: Scalar>(
    dataset: &[McqaExample],
    config: &AuditConfig,
) -> Result<AuditReport<S>> {
    let rows = featurize(dataset, &config.sentinel);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (example, row) in dataset.iter().zip(rows) {
        if in_train_split(&example.id, config.split_fraction) {
            train.push(row);
        } else {
            eval.push(row);
        }
    }
    if eval.len() < MIN_EVAL_EXAMPLES {
        return Err(Error::DatasetTooSmall {
            eval: eval.len(),
            min: MIN_EVAL_EXAMPLES,
        });
    }

    let classifier: CueClassifier<S> = train_cue_classifier(
        &train,
        config.epochs,
        S::from_f64(config.learning_rate).unwrap(),
        config.seed,
    );
    let accuracy = classifier.accuracy(&eval);
    let chance = eval
        .iter()
        .map(|(options, _)| 1.0 / options.len() as f64)
        .sum::<f64>()
        / eval.len() as f64;

    Ok(AuditReport {
        adversary: format!(
            "linear softmax over {FEATURE_DIM} per-option features \
             (unmasked_overlap, absent, option_len, mask_count), \
             full-batch gradient descent; one instantiation of a cue-based classifier"
        ),
        accuracy,
        chance,
        n_train: train.len(),
        n_eval: eval.len(),
        weights: classifier.weights,
        bias: classifier.bias,
        extraneous: extraneous_stats(dataset),
    })
}
