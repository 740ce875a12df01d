//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Criteria 1-8 run against the shipped fixtures and synthetic data with
//! pinned seeds and tolerances. Criterion 9 needs externally supplied
//! paper-scale data and is `#[ignore]`d; point `FORGE_REAL_CORPUS` and
//! `FORGE_REAL_DIFFDX` at real crawls and run with `--ignored` to include
//! it.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use forge_core::audit::{
    audit_dataset, extraneous_stats, log_loss, log_loss_gradient, AuditConfig, CueFeatures,
    LabeledFeatures, FEATURE_DIM,
};
use forge_core::corpus::{filter_records, load_corpus, prune_short_paragraphs, DocRecord, FilterRules};
use forge_core::distractors::{eval_retrieval, load_diffdx, DiffDxGraph};
use forge_core::generator::{example_id, generate_dataset, GenConfig, McqaExample};
use forge_core::masking::{
    mask_prob_matching, mask_probability, mask_token_naive, mask_word_naive, MaskContext, Strategy,
};
use forge_core::retrieval::{bm25_score, build_index, search};
use forge_core::tokenizer::SubwordVocab;
use forge_core::{BigRational, Bm25Index, Rational};

const GENERATION_SEED: u64 = 5;

fn fixture(name: &str) -> String {
    format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn ingested_fixture() -> Vec<DocRecord> {
    let records = load_corpus(fixture("corpus.jsonl")).unwrap();
    let (records, stats) = filter_records(records, &FilterRules::default());
    let mut stats = stats;
    prune_short_paragraphs(records, 30, &mut stats)
}

fn fixture_index(records: &[DocRecord]) -> Bm25Index {
    let docs: Vec<(String, String, String)> = records
        .iter()
        .flat_map(|r| {
            r.paragraphs
                .iter()
                .enumerate()
                .map(|(i, p)| (example_id(&r.id, i), r.title.clone(), p.clone()))
        })
        .collect();
    build_index(docs, 1.2, 0.75).unwrap()
}

fn fixture_dataset(strategy: Strategy, vocab: Option<&SubwordVocab>) -> Vec<McqaExample> {
    let records = ingested_fixture();
    let index = fixture_index(&records);
    let (diffdx, _) = load_diffdx(fixture("diffdx.tsv")).unwrap();
    let config = GenConfig::new(strategy, GENERATION_SEED);
    let (dataset, report) = generate_dataset(&records, &diffdx, &index, &config, vocab).unwrap();
    assert_eq!(report.skipped.values().sum::<u64>(), 0);
    dataset
}

fn assert_within_budget(start: Instant, budget: Duration, criterion: &str) {
    let elapsed = start.elapsed();
    assert!(
        elapsed <= budget,
        "{criterion} exceeded its runtime budget: {elapsed:?} > {budget:?}"
    );
}

/// Criterion 1: exact mask probabilities over 1,000 randomized option sets.
#[test]
fn criterion_1_mask_probability_is_exact() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xC1);
    let pool = [
        "fever", "cough", "rash", "pain", "onset", "renal", "distal", "focal", "acute", "benign",
    ];
    let mut checked = 0usize;
    while checked < 1000 {
        let n = rng.gen_range(2..=8);
        let shared = pool[rng.gen_range(0..pool.len())];
        let mut options: Vec<String> = (0..n)
            .map(|i| {
                let a = pool[rng.gen_range(0..pool.len())];
                format!("{a} opt{i}")
            })
            .collect();
        // Plant the probe word into a random nonempty subset.
        let planted = rng.gen_range(1..=n);
        for slot in rand::seq::index::sample(&mut rng, n, planted) {
            options[slot] = format!("{} {shared}", options[slot]);
        }

        // Brute force: scan lowercased alphanumeric runs directly.
        let count = options
            .iter()
            .filter(|o| {
                o.to_lowercase()
                    .split(|c: char| !c.is_alphanumeric())
                    .any(|w| w == shared)
            })
            .count() as u64;
        assert!(count >= 1);
        let expected = Rational::new(1, count);
        assert_eq!(
            mask_probability(shared, &options).unwrap(),
            expected,
            "options {options:?} word {shared}"
        );
        checked += 1;
    }
    assert_within_budget(start, Duration::from_secs(1), "criterion 1");
    println!("[PASS] criterion 1: mask_probability exact on 1000 randomized option sets");
}

/// Criterion 2: the equal-likelihood and uniform-marginal invariants, by
/// Monte Carlo at 100k seeded trials per configuration.
#[test]
fn criterion_2_equal_likelihood_masking() {
    let start = Instant::now();
    const TRIALS: usize = 100_000;
    const N: usize = 8;
    let q = "observed target context";

    for k in 1..=4usize {
        let options: Vec<String> = (0..N)
            .map(|i| {
                if i < k {
                    format!("target variant{i}")
                } else {
                    format!("unrelated other{i}")
                }
            })
            .collect();
        let p = 1.0 / k as f64;
        let se = (p * (1.0 - p) / TRIALS as f64).sqrt();

        // Conditioned on each containing option being the correct one.
        for correct in 0..k {
            let mut masked = 0usize;
            for t in 0..TRIALS {
                let id = format!("k{k}c{correct}t{t}");
                let ctx = MaskContext::new("[MASK]", 1001, &id);
                let out = mask_prob_matching(q, &options, correct, &ctx);
                let coin = out
                    .plan
                    .candidate_words
                    .iter()
                    .find(|c| c.word == "target")
                    .expect("target is a candidate")
                    .coin;
                masked += usize::from(coin);
            }
            let rate = masked as f64 / TRIALS as f64;
            assert!(
                (rate - p).abs() <= 3.0 * se.max(1e-9),
                "k={k} correct={correct}: rate {rate} vs {p} (3se {})",
                3.0 * se
            );
        }

        // Marginal under a uniformly drawn correct option.
        let marginal = 1.0 / N as f64;
        let marginal_se = (marginal * (1.0 - marginal) / TRIALS as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(0x51 + k as u64);
        let mut masked = 0usize;
        for t in 0..TRIALS {
            let correct = rng.gen_range(0..N);
            let id = format!("m{k}t{t}");
            let ctx = MaskContext::new("[MASK]", 1002, &id);
            let out = mask_prob_matching(q, &options, correct, &ctx);
            masked += usize::from(
                out.plan
                    .candidate_words
                    .iter()
                    .any(|c| c.word == "target" && c.coin),
            );
        }
        let rate = masked as f64 / TRIALS as f64;
        assert!(
            (rate - marginal).abs() <= 3.0 * marginal_se,
            "k={k} marginal: rate {rate} vs {marginal}"
        );
    }
    assert_within_budget(start, Duration::from_secs(30), "criterion 2");
    println!("[PASS] criterion 2: mask rate 1/k per containing option and 1/N marginal (100k trials/config)");
}

/// Criterion 3: the leakage collapse on the shipped fixture corpus.
#[test]
fn criterion_3_leakage_collapse() {
    let start = Instant::now();
    let audit_config = AuditConfig::default();

    let word = fixture_dataset(Strategy::WordNaive, None);
    let word_report = audit_dataset::<f64>(&word, &audit_config).unwrap();
    let prob = fixture_dataset(Strategy::ProbMatching, None);
    let prob_report = audit_dataset::<f64>(&prob, &audit_config).unwrap();

    assert!(
        word_report.accuracy >= 2.0 * word_report.chance,
        "word_naive leaks too little: {} vs chance {}",
        word_report.accuracy,
        word_report.chance
    );
    assert!(
        (prob_report.accuracy - prob_report.chance).abs() <= 0.05,
        "prob_matching outside the chance band: {} vs chance {}",
        prob_report.accuracy,
        prob_report.chance
    );
    assert!(
        word_report.accuracy > prob_report.accuracy,
        "ordering violated: word {} <= prob {}",
        word_report.accuracy,
        prob_report.accuracy
    );
    assert_within_budget(start, Duration::from_secs(120), "criterion 3");
    println!(
        "[PASS] criterion 3: cue classifier {:.4} under word_naive vs {:.4} under prob_matching (chance {:.4})",
        word_report.accuracy, prob_report.accuracy, prob_report.chance
    );
}

/// Criterion 4: extraneous masking is ordered token >= word, and the
/// dash-leak pattern reproduces on a dedicated RT-PCR case.
#[test]
fn criterion_4_extraneous_masking_ordering() {
    let vocab = SubwordVocab::load(fixture("vocab.txt")).unwrap();
    let token = fixture_dataset(Strategy::TokenNaive, Some(&vocab));
    let word = fixture_dataset(Strategy::WordNaive, Some(&vocab));

    let token_stats = &extraneous_stats(&token)["token_naive"];
    let word_stats = &extraneous_stats(&word)["word_naive"];
    assert!(
        token_stats.extraneous_total() >= word_stats.extraneous_total(),
        "token {} < word {}",
        token_stats.extraneous_total(),
        word_stats.extraneous_total()
    );

    // Fig-style dedicated case: with the correct option "RT-PCR", the dash
    // is masked at token level and untouched at word level.
    let q = "An RT-PCR test confirms the working diagnosis";
    let ctx = MaskContext::new("[MASK]", 0, "rtpcr-case");
    let token_case = mask_token_naive(q, "RT-PCR", &vocab, &ctx).unwrap();
    assert!(
        token_case.plan.spans.iter().any(|s| s.hidden == "-"),
        "token masking left the dash: {}",
        token_case.text
    );
    let word_case = mask_word_naive(q, "RT-PCR", &ctx);
    assert!(
        word_case.plan.spans.iter().all(|s| s.hidden != "-"),
        "word masking hit the dash: {}",
        word_case.text
    );
    assert_eq!(word_case.text, "An [MASK]-[MASK] test confirms the working diagnosis");
    println!(
        "[PASS] criterion 4: extraneous units token {} >= word {}; RT-PCR dash masked only at token level",
        token_stats.extraneous_total(),
        word_stats.extraneous_total()
    );
}

/// Criterion 5: BM25 against a hand-computed oracle, exhaustive-ranking
/// equality, and the prefix property.
#[test]
fn criterion_5_bm25_oracle() {
    let start = Instant::now();
    let docs = vec![
        ("d1".to_string(), "cold".to_string(), "common cold symptoms include cough".to_string()),
        ("d2".to_string(), "bronchitis".to_string(), "bronchitis cough cough treatment".to_string()),
        ("d3".to_string(), "fracture".to_string(), "bone fracture treatment".to_string()),
    ];
    let index: Bm25Index = build_index(docs, 1.2, 0.75).unwrap();

    // Independent long-hand evaluation of the Okapi formula.
    let okapi = |tf: f64, df: f64, len: f64| {
        let idf = (1.0 + (3.0 - df + 0.5) / (df + 0.5)).ln();
        idf * tf * (1.2 + 1.0) / (tf + 1.2 * (1.0 - 0.75 + 0.75 * len / 5.0))
    };
    let cases = [
        (vec!["cough", "treatment"], "d2", okapi(2.0, 2.0, 5.0) + okapi(1.0, 2.0, 5.0)),
        (vec!["cold"], "d1", okapi(2.0, 1.0, 6.0)),
        (vec!["cough", "cough"], "d2", 2.0 * okapi(2.0, 2.0, 5.0)),
        (vec!["zebra"], "d3", 0.0),
    ];
    for (terms, doc, expected) in cases {
        let got = bm25_score(&index, &terms, doc).unwrap();
        assert!((got - expected).abs() < 1e-9, "{terms:?}@{doc}: {got} vs {expected}");
    }

    for query in ["cough treatment", "common cold bone", "bronchitis fracture cough"] {
        let hits = search(&index, query, 3);
        let terms: Vec<&str> = query.split_whitespace().collect();
        let mut brute: Vec<(String, f64)> = ["d1", "d2", "d3"]
            .iter()
            .map(|d| (d.to_string(), bm25_score(&index, &terms, d).unwrap()))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        assert_eq!(
            hits.iter().map(|h| (&h.doc_id, h.score)).collect::<Vec<_>>(),
            brute.iter().map(|(d, s)| (d, *s)).collect::<Vec<_>>(),
            "query {query}"
        );
        for k in 1..=3 {
            assert_eq!(search(&index, query, k), hits[..k.min(hits.len())].to_vec());
        }
    }
    assert_within_budget(start, Duration::from_secs(1), "criterion 5");
    println!("[PASS] criterion 5: BM25 matches the hand oracle to 1e-9; ranking exhaustive; prefix property holds");
}

/// Criterion 6: retrieval metrics against exact hand-computed rationals,
/// plus the random-ranker floor on a 2,000-title synthetic graph.
#[test]
fn criterion_6_retrieval_metric_oracle() {
    let start = Instant::now();

    let mut toy = DiffDxGraph::default();
    for (source, targets) in [
        ("A", vec!["a1", "a2", "a3", "a4"]),
        ("B", vec!["b1"]),
        ("C", vec!["c1", "c2"]),
        ("D", vec!["d1", "d2", "d3"]),
        ("E", vec!["e1", "e2", "e3", "e4", "e5"]),
    ] {
        for t in targets {
            toy.insert(source, t);
        }
    }
    let table: HashMap<&str, Vec<&str>> = [
        ("A", vec!["a1", "x", "a2"]),
        ("B", vec!["x", "b1", "y"]),
        ("C", vec!["x", "y", "z"]),
        ("D", vec!["d3", "d1", "d2"]),
        ("E", vec!["e5", "x", "y"]),
    ]
    .into();
    let report = eval_retrieval(
        &toy,
        |q| table[q].iter().map(|s| s.to_string()).collect(),
        3,
    )
    .unwrap();
    assert_eq!(report.precision_at_k, BigRational::new(BigInt::from(7), BigInt::from(15)));
    assert_eq!(report.recall_at_k, BigRational::new(BigInt::from(27), BigInt::from(50)));
    assert_eq!(report.queries_evaluated, 5);

    // Random-permutation ranker over a synthetic graph: both metrics stay
    // under 0.5%.
    const TITLES: usize = 2000;
    let titles: Vec<String> = (0..TITLES).map(|i| format!("syn{i:04}")).collect();
    let mut synthetic = DiffDxGraph::default();
    for i in 0..TITLES {
        synthetic.insert(&titles[i], &titles[(i + 1) % TITLES]);
        synthetic.insert(&titles[i], &titles[(i + 2) % TITLES]);
    }
    let ranker = |query: &str| -> Vec<String> {
        let seed = forge_core::rng::derive_seed(0xC6, &[query]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool: Vec<&String> = titles.iter().filter(|t| *t != query).collect();
        pool.shuffle(&mut rng);
        pool.into_iter().take(3).cloned().collect()
    };
    let random_report = eval_retrieval(&synthetic, ranker, 3).unwrap();
    let half_percent = BigRational::new(BigInt::from(1), BigInt::from(200));
    assert!(
        random_report.precision_at_k < half_percent,
        "random precision {}",
        random_report.precision_f64()
    );
    assert!(
        random_report.recall_at_k < half_percent,
        "random recall {}",
        random_report.recall_f64()
    );
    assert_within_budget(start, Duration::from_secs(30), "criterion 6");
    println!(
        "[PASS] criterion 6: toy metrics exactly 7/15 and 27/50; random ranker at {:.4}%/{:.4}%",
        100.0 * random_report.precision_f64(),
        100.0 * random_report.recall_f64()
    );
}

/// Criterion 7: byte-identical pipeline outputs across reruns and thread
/// counts, through the actual binary.
#[test]
fn criterion_7_pipeline_determinism() {
    let run = |dir: &Path, threads: &str| {
        let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
        let stages: Vec<Vec<String>> = vec![
            vec![
                "ingest".into(), "--in".into(), fixture("corpus.jsonl"), "--out".into(),
                p("clean.jsonl"), "--min-words".into(), "30".into(), "--stats".into(), p("stats.json"),
            ],
            vec![
                "index".into(), "--in".into(), p("clean.jsonl"), "--out".into(), p("bm25.idx"),
            ],
            vec![
                "generate".into(), "--corpus".into(), p("clean.jsonl"), "--diffdx".into(),
                fixture("diffdx.tsv"), "--index".into(), p("bm25.idx"), "--masking".into(),
                "prob".into(), "--n".into(), "7".into(), "--seed".into(), GENERATION_SEED.to_string(),
                "--out".into(), p("dataset.jsonl"), "--report".into(), p("report.json"),
                "--threads".into(), threads.into(),
            ],
            vec![
                "audit".into(), "--in".into(), p("dataset.jsonl"), "--report".into(), p("audit.json"),
            ],
        ];
        for stage in stages {
            let args: Vec<&str> = stage.iter().map(String::as_str).collect();
            let out = Command::new(env!("CARGO_BIN_EXE_forge"))
                .args(&args)
                .output()
                .unwrap();
            assert_eq!(
                out.status.code(),
                Some(0),
                "{} failed: {}",
                args[0],
                String::from_utf8_lossy(&out.stderr)
            );
        }
    };

    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let threaded = tempfile::tempdir().unwrap();
    run(first.path(), "1");
    run(second.path(), "1");
    run(threaded.path(), "8");

    for name in ["clean.jsonl", "stats.json", "bm25.idx", "dataset.jsonl", "report.json", "audit.json"] {
        let a = std::fs::read(first.path().join(name)).unwrap();
        let b = std::fs::read(second.path().join(name)).unwrap();
        let c = std::fs::read(threaded.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical reruns");
        assert_eq!(a, c, "{name} differs between --threads 1 and --threads 8");
    }
    println!("[PASS] criterion 7: dataset, index, and reports byte-identical across reruns and thread counts");
}

/// Criterion 8: analytic classifier gradients against central finite
/// differences at 100 random parameter points.
#[test]
fn criterion_8_gradient_check() {
    let mut rng = StdRng::seed_from_u64(0xC8);
    let data: Vec<LabeledFeatures> = (0..40)
        .map(|_| {
            let n = rng.gen_range(2..=8);
            let label = rng.gen_range(0..n);
            let options: Vec<CueFeatures> = (0..n)
                .map(|_| {
                    let option_len = rng.gen_range(1..6);
                    let overlap = rng.gen_range(0..=option_len);
                    CueFeatures {
                        unmasked_overlap: overlap,
                        absent: option_len - overlap,
                        option_len,
                        mask_count: rng.gen_range(0..8),
                    }
                })
                .collect();
            (options, label)
        })
        .collect();

    for point in 0..100 {
        let mut weights = [0.0f64; FEATURE_DIM];
        for w in weights.iter_mut() {
            *w = rng.gen_range(-0.8..0.8);
        }
        let bias: f64 = rng.gen_range(-0.8..0.8);
        let (grad_w, grad_b) = log_loss_gradient(&weights, bias, &data);

        let h = 1e-5;
        let verify = |i: Option<usize>, analytic: f64| {
            let (mut plus_w, mut minus_w) = (weights, weights);
            let (plus_b, minus_b) = match i {
                Some(i) => {
                    plus_w[i] += h;
                    minus_w[i] -= h;
                    (bias, bias)
                }
                None => (bias + h, bias - h),
            };
            let fd = (log_loss(&plus_w, plus_b, &data) - log_loss(&minus_w, minus_b, &data)) / (2.0 * h);
            let tol = 1e-6 * analytic.abs().max(fd.abs()).max(1.0);
            assert!(
                (analytic - fd).abs() <= tol,
                "point {point} component {i:?}: analytic {analytic} vs fd {fd}"
            );
        };
        for (i, &g) in grad_w.iter().enumerate() {
            verify(Some(i), g);
        }
        verify(None, grad_b);
    }
    println!("[PASS] criterion 8: analytic gradients match central differences at 100 random points (1e-6 relative)");
}

/// Criterion 9 (stretch, not gating): with externally supplied paper-scale
/// corpus and diffdx files, the BM25 distractor ranker lands in the
/// sub-percent precision@3/recall@3 range, order-of-magnitude tolerance.
#[test]
#[ignore = "requires FORGE_REAL_CORPUS and FORGE_REAL_DIFFDX pointing at paper-scale data"]
fn criterion_9_paper_scale_bm25_distractor_ranking() {
    let corpus_path = std::env::var("FORGE_REAL_CORPUS").expect("set FORGE_REAL_CORPUS");
    let diffdx_path = std::env::var("FORGE_REAL_DIFFDX").expect("set FORGE_REAL_DIFFDX");

    let records = load_corpus(&corpus_path).unwrap();
    let (records, stats) = filter_records(records, &FilterRules::default());
    let mut stats = stats;
    let records = prune_short_paragraphs(records, 30, &mut stats);
    let index = fixture_index(&records);
    let (diffdx, _) = load_diffdx(&diffdx_path).unwrap();

    // Paper-literal query: the title alone.
    let ranker = |title: &str| -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let norm = title.trim().to_lowercase();
        for hit in search(&index, title, index.doc_count()) {
            let candidate = &index.doc(&hit.doc_id).unwrap().title;
            let c_norm = candidate.trim().to_lowercase();
            if c_norm == norm || !seen.insert(c_norm) {
                continue;
            }
            out.push(candidate.clone());
            if out.len() == 3 {
                break;
            }
        }
        out
    };
    let report = eval_retrieval(&diffdx, ranker, 3).unwrap();
    let (p, r) = (report.precision_f64(), report.recall_f64());
    println!(
        "criterion 9: BM25 precision@3 {:.4}% recall@3 {:.4}% over {} queries",
        100.0 * p,
        100.0 * r,
        report.queries_evaluated
    );
    // Order-of-magnitude band around the sub-percent reference values.
    assert!((0.0006 / 10.0..=0.006 * 10.0).contains(&p), "precision {p}");
    assert!((0.0007 / 10.0..=0.007 * 10.0).contains(&r), "recall {r}");
    println!("[PASS] criterion 9: paper-scale BM25 distractor ranking in the sub-percent band");
}
