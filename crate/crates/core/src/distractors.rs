//! Incorrect-option sourcing and evaluation.
//!
//! Distractors come from two places: a differential-diagnosis graph
//! (condition -> conditions it is commonly distinguished from) and BM25
//! retrieval of related pages over the same encyclopedia. Graph edges are
//! preferred; retrieval fills the remainder.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, LineError, Result};
use crate::retrieval::{search, Bm25Index};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::tokenizer;
use crate::BigRational;

fn norm_title(title: &str) -> String {
    tokenizer::normalize(title.trim())
}

#[derive(Debug, Clone, Default)]
struct NodeEdges {
    display: String,
    /// normalized target -> display target
    targets: BTreeMap<String, String>,
}

/// Directed associations from a condition title to its differential
/// diagnoses. Lookups are case-insensitive; stored display titles keep
/// their original casing.
#[derive(Debug, Clone, Default)]
pub struct DiffDxGraph {
    nodes: BTreeMap<String, NodeEdges>,
    edge_count: usize,
}

impl DiffDxGraph {
    pub fn is_empty(&self) -> bool {
        self.edge_count == 0
    }

    /// Number of directed edges.
    pub fn len(&self) -> usize {
        self.edge_count
    }

    pub fn insert(&mut self, source: &str, target: &str) -> bool {
        let source_norm = norm_title(source);
        let target_norm = norm_title(target);
        if source_norm.is_empty() || target_norm.is_empty() || source_norm == target_norm {
            return false;
        }
        let node = self.nodes.entry(source_norm).or_insert_with(|| NodeEdges {
            display: source.trim().to_string(),
            targets: BTreeMap::new(),
        });
        if node.targets.contains_key(&target_norm) {
            return false;
        }
        node.targets.insert(target_norm, target.trim().to_string());
        self.edge_count += 1;
        true
    }

    /// Differential diagnoses of `title`, ordered by normalized target.
    pub fn diffdx_for(&self, title: &str) -> Vec<&str> {
        self.nodes
            .get(&norm_title(title))
            .map(|n| n.targets.values().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn contains_edge(&self, source: &str, target: &str) -> bool {
        self.nodes
            .get(&norm_title(source))
            .is_some_and(|n| n.targets.contains_key(&norm_title(target)))
    }

    /// Source titles (display form), in normalized order.
    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.nodes.values().map(|n| n.display.as_str())
    }

    /// Add the reverse of every edge.
    pub fn symmetrize(&mut self) {
        let pairs: Vec<(String, String)> = self
            .nodes
            .values()
            .flat_map(|n| {
                n.targets
                    .values()
                    .map(|t| (t.clone(), n.display.clone()))
                    .collect::<Vec<_>>()
            })
            .collect();
        for (source, target) in pairs {
            self.insert(&source, &target);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DiffDxLoadReport {
    pub edges: usize,
    pub duplicates_dropped: usize,
    pub self_edges_dropped: usize,
    pub line_errors: Vec<LineError>,
}

/// Load a two-column tab-separated edge file. Duplicate edges collapse,
/// self-edges are dropped with a warning count, malformed lines are
/// reported with their line number.
pub fn load_diffdx(path: impl AsRef<Path>) -> Result<(DiffDxGraph, DiffDxLoadReport)> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut graph = DiffDxGraph::default();
    let mut report = DiffDxLoadReport::default();
    for (idx, line) in file.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((source, target)) = line.split_once('\t') else {
            report
                .line_errors
                .push(LineError::new(line_no, "expected two tab-separated titles"));
            continue;
        };
        let (source, target) = (source.trim(), target.trim());
        if source.is_empty() || target.is_empty() {
            report.line_errors.push(LineError::new(line_no, "empty title"));
            continue;
        }
        if norm_title(source) == norm_title(target) {
            report.self_edges_dropped += 1;
            continue;
        }
        if !graph.insert(source, target) {
            report.duplicates_dropped += 1;
        }
    }
    report.edges = graph.len();
    Ok((graph, report))
}

/// What the BM25 distractor query is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QueryMode {
    /// The bare page title.
    Title,
    /// Title plus lead paragraph; lexically richer, the default.
    #[default]
    TitleLead,
}

/// Jaccard similarity of normalized title word sets; used to suppress
/// retrieved titles that are near-duplicates of the correct one.
fn title_jaccard(a: &str, b: &str) -> f64 {
    let a = tokenizer::word_types(a);
    let b = tokenizer::word_types(b);
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

const NEAR_DUP_JACCARD: f64 = 0.8;

/// Top-m page titles related to `(title, lead_paragraph)`, excluding the
/// page itself, any doc in `exclusions`, titles equal to the query title
/// after normalization, and near-duplicate titles. Deduplicated, in rank
/// order.
pub fn retrieve_distractors<S: Scalar>(
    title: &str,
    lead_paragraph: &str,
    index: &Bm25Index<S>,
    m: usize,
    exclusions: &HashSet<String>,
    mode: QueryMode,
) -> Vec<String> {
    let query = match mode {
        QueryMode::Title => title.to_string(),
        QueryMode::TitleLead => format!("{title}\n{lead_paragraph}"),
    };
    let self_norm = norm_title(title);
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for hit in search(index, &query, index.doc_count()) {
        if out.len() == m {
            break;
        }
        if exclusions.contains(&hit.doc_id) {
            continue;
        }
        let candidate = &index.doc(&hit.doc_id).expect("hit from index").title;
        let candidate_norm = norm_title(candidate);
        if candidate_norm == self_norm || seen.contains(&candidate_norm) {
            continue;
        }
        if title_jaccard(candidate, title) >= NEAR_DUP_JACCARD {
            continue;
        }
        seen.insert(candidate_norm);
        out.push(candidate.clone());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionProvenance {
    /// The page title, i.e. the correct option.
    Title,
    /// A differential diagnosis from the graph.
    Diffdx,
    /// A retrieved related page title.
    Retrieved,
}

/// An assembled, shuffled option set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionSet {
    pub options: Vec<String>,
    pub provenance: Vec<OptionProvenance>,
    pub correct_index: usize,
}

impl OptionSet {
    pub fn correct(&self) -> &str {
        &self.options[self.correct_index]
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }
}

/// Build `n_distractors + 1` options for `correct_title`: every available
/// differential diagnosis first (up to `n_distractors`), retrieved titles to
/// fill, all distinct under normalization. The final order is shuffled by a
/// stream keyed on `(seed, example_id)`.
pub fn assemble_options(
    correct_title: &str,
    diffdx: &DiffDxGraph,
    retrieved: &[String],
    n_distractors: usize,
    seed: u64,
    example_id: &str,
) -> Result<OptionSet> {
    let mut used: HashSet<String> = HashSet::new();
    used.insert(norm_title(correct_title));

    let mut chosen: Vec<(String, OptionProvenance)> =
        vec![(correct_title.to_string(), OptionProvenance::Title)];
    for dx in diffdx.diffdx_for(correct_title) {
        if chosen.len() - 1 == n_distractors {
            break;
        }
        if used.insert(norm_title(dx)) {
            chosen.push((dx.to_string(), OptionProvenance::Diffdx));
        }
    }
    for title in retrieved {
        if chosen.len() - 1 == n_distractors {
            break;
        }
        if used.insert(norm_title(title)) {
            chosen.push((title.clone(), OptionProvenance::Retrieved));
        }
    }
    let found = chosen.len() - 1;
    if found < n_distractors {
        return Err(Error::InsufficientDistractors {
            title: correct_title.to_string(),
            needed: n_distractors,
            found,
        });
    }

    let mut rng = stream(seed, &[example_id, "options"]);
    chosen.shuffle(&mut rng);
    let correct_index = chosen
        .iter()
        .position(|(_, p)| *p == OptionProvenance::Title)
        .expect("correct option present");
    let (options, provenance) = chosen.into_iter().unzip();
    Ok(OptionSet {
        options,
        provenance,
        correct_index,
    })
}

/// Mean precision@k / recall@k of a ranker against the graph's gold edges,
/// kept as exact rationals.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalEvalReport {
    pub k: usize,
    pub precision_at_k: BigRational,
    pub recall_at_k: BigRational,
    pub queries_evaluated: usize,
}

impl RetrievalEvalReport {
    pub fn precision_f64(&self) -> f64 {
        self.precision_at_k.to_f64().unwrap_or(f64::NAN)
    }

    pub fn recall_f64(&self) -> f64 {
        self.recall_at_k.to_f64().unwrap_or(f64::NAN)
    }
}

/// Evaluate `ranker` over every graph source: truncate its ranking at `k`,
/// count gold differential diagnoses retrieved, and average the per-query
/// precision `hits/k` and recall `hits/|gold|`.
pub fn eval_retrieval<F>(graph: &DiffDxGraph, ranker: F, k: usize) -> Result<RetrievalEvalReport>
where
    F: Fn(&str) -> Vec<String>,
{
    if graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    assert!(k >= 1, "k must be at least 1");

    let mut precision_sum = BigRational::zero();
    let mut recall_sum = BigRational::zero();
    let mut queries = 0usize;
    for node in graph.nodes.values() {
        let gold: HashSet<&String> = node.targets.keys().collect();
        if gold.is_empty() {
            continue;
        }
        let ranked = ranker(&node.display);
        let hits = ranked
            .iter()
            .take(k)
            .filter(|t| gold.contains(&norm_title(t)))
            .count();
        precision_sum += BigRational::new(BigInt::from(hits), BigInt::from(k));
        recall_sum += BigRational::new(BigInt::from(hits), BigInt::from(gold.len()));
        queries += 1;
    }
    let denom = BigRational::new(BigInt::from(queries), BigInt::one());
    Ok(RetrievalEvalReport {
        k,
        precision_at_k: precision_sum / denom.clone(),
        recall_at_k: recall_sum / denom,
        queries_evaluated: queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::build_index;
    use std::io::Write;

    fn graph_from(lines: &str) -> (DiffDxGraph, DiffDxLoadReport) {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(lines.as_bytes()).unwrap();
        load_diffdx(file.path()).unwrap()
    }

    #[test]
    fn edge_lookup_is_case_insensitive() {
        let (graph, report) = graph_from("Common cold\tBronchitis\n");
        assert!(graph.contains_edge("Common cold", "Bronchitis"));
        assert!(graph.contains_edge("COMMON COLD", "bronchitis"));
        assert_eq!(graph.diffdx_for("common COLD"), vec!["Bronchitis"]);
        assert_eq!(report.edges, 1);
    }

    #[test]
    fn self_edges_are_dropped_with_a_warning() {
        let (graph, report) = graph_from("Sepsis\tsepsis\nSepsis\tShock\n");
        assert_eq!(graph.len(), 1);
        assert_eq!(report.self_edges_dropped, 1);
    }

    #[test]
    fn ten_lines_with_two_duplicates_make_eight_edges() {
        let lines = "A\tB\nA\tC\nA\tB\nB\tA\nB\tC\nC\tA\nC\tB\nc\tb\nD\tA\nD\tB\n";
        let (graph, report) = graph_from(lines);
        assert_eq!(graph.len(), 8);
        assert_eq!(report.duplicates_dropped, 2);
        assert!(report.line_errors.is_empty());
    }

    #[test]
    fn malformed_lines_are_reported_with_numbers() {
        let (graph, report) = graph_from("A\tB\nno tab here\nX\t\nC\tD\n");
        assert_eq!(graph.len(), 2);
        assert_eq!(report.line_errors.len(), 2);
        assert_eq!(report.line_errors[0].line, 2);
        assert_eq!(report.line_errors[1].line, 3);
    }

    #[test]
    fn symmetrize_adds_reverse_edges() {
        let (mut graph, _) = graph_from("A\tB\nA\tC\n");
        graph.symmetrize();
        assert!(graph.contains_edge("B", "A"));
        assert!(graph.contains_edge("C", "A"));
        assert_eq!(graph.len(), 4);
    }

    fn mini_index() -> Bm25Index<f64> {
        build_index(
            vec![
                ("p1#0".to_string(), "Common cold".into(), "rhinovirus nasal congestion sneezing".into()),
                ("p2#0".to_string(), "Bronchitis".into(), "airway inflammation rhinovirus cough".into()),
                ("p3#0".to_string(), "Femur fracture".into(), "bone injury surgical fixation".into()),
            ],
            1.2,
            0.75,
        )
        .unwrap()
    }

    #[test]
    fn single_page_corpus_yields_no_distractors() {
        let index: Bm25Index<f64> = build_index(
            vec![("only".to_string(), "Common cold".into(), "rhinovirus".into())],
            1.2,
            0.75,
        )
        .unwrap();
        let got = retrieve_distractors(
            "Common cold",
            "rhinovirus",
            &index,
            5,
            &HashSet::new(),
            QueryMode::TitleLead,
        );
        assert!(got.is_empty());
    }

    #[test]
    fn shared_rare_terms_rank_the_matching_page_first() {
        let index = mini_index();
        let got = retrieve_distractors(
            "Common cold",
            "rhinovirus nasal congestion",
            &index,
            2,
            &HashSet::new(),
            QueryMode::TitleLead,
        );
        // "Bronchitis" shares "rhinovirus" with the query; the fracture page
        // shares nothing.
        assert_eq!(got, vec!["Bronchitis".to_string()]);
    }

    #[test]
    fn query_title_is_never_returned_in_any_casing() {
        let docs = vec![
            ("a".to_string(), "Common cold".into(), "shared words here".into()),
            ("b".to_string(), "COMMON COLD".into(), "shared words here".into()),
            ("c".to_string(), "Bronchitis".into(), "shared words here".into()),
        ];
        let index: Bm25Index<f64> = build_index(docs, 1.2, 0.75).unwrap();
        let got = retrieve_distractors(
            "Common Cold",
            "shared words",
            &index,
            3,
            &HashSet::new(),
            QueryMode::TitleLead,
        );
        assert_eq!(got, vec!["Bronchitis".to_string()]);
    }

    #[test]
    fn excluded_doc_ids_are_skipped() {
        let index = mini_index();
        let exclusions: HashSet<String> = ["p2#0".to_string()].into();
        let got = retrieve_distractors(
            "Common cold",
            "rhinovirus nasal congestion",
            &index,
            2,
            &exclusions,
            QueryMode::TitleLead,
        );
        assert!(got.is_empty(), "{got:?}");
    }

    #[test]
    fn near_duplicate_titles_are_suppressed() {
        // 4 of 5 words shared -> Jaccard 4/6 = 0.67 kept; exact subsets with
        // Jaccard >= 0.8 dropped.
        let docs = vec![
            ("a".to_string(), "Acute viral nasal infection syndrome".into(), "q terms".into()),
            ("b".to_string(), "Acute viral nasal infection".into(), "q terms".into()),
            ("c".to_string(), "Bronchitis".into(), "q terms".into()),
        ];
        let index: Bm25Index<f64> = build_index(docs, 1.2, 0.75).unwrap();
        let got = retrieve_distractors(
            "Acute viral nasal infection syndrome",
            "q terms",
            &index,
            5,
            &HashSet::new(),
            QueryMode::TitleLead,
        );
        // "Acute viral nasal infection" has Jaccard 4/5 = 0.8 with the query.
        assert_eq!(got, vec!["Bronchitis".to_string()]);
    }

    fn retrieved(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn assemble_prefers_diffdx_then_fills_with_retrieved() {
        let (graph, _) = graph_from("Common cold\tBronchitis\nCommon cold\tInfluenza\n");
        let set = assemble_options(
            "Common cold",
            &graph,
            &retrieved(&["Sinusitis", "Pharyngitis", "Laryngitis", "Otitis media", "Measles"]),
            7,
            13,
            "e1",
        )
        .unwrap();
        assert_eq!(set.options.len(), 8);
        assert_eq!(set.correct(), "Common cold");
        let count = |p: OptionProvenance| set.provenance.iter().filter(|&&x| x == p).count();
        assert_eq!(count(OptionProvenance::Title), 1);
        assert_eq!(count(OptionProvenance::Diffdx), 2);
        assert_eq!(count(OptionProvenance::Retrieved), 5);
        // No duplicates after normalization.
        let norms: HashSet<String> = set.options.iter().map(|o| norm_title(o)).collect();
        assert_eq!(norms.len(), 8);
    }

    #[test]
    fn no_diffdx_means_all_retrieved() {
        let graph = DiffDxGraph::default();
        let set = assemble_options(
            "Appendectomy",
            &graph,
            &retrieved(&["A", "B", "C", "D", "E", "F", "G"]),
            7,
            1,
            "e",
        )
        .unwrap();
        let diffdx = set
            .provenance
            .iter()
            .filter(|&&p| p == OptionProvenance::Diffdx)
            .count();
        assert_eq!(diffdx, 0);
        assert_eq!(set.options.len(), 8);
    }

    #[test]
    fn same_seed_and_id_shuffle_identically() {
        let (graph, _) = graph_from("X\tY\n");
        let make = || {
            assemble_options("X", &graph, &retrieved(&["A", "B", "C"]), 3, 99, "ex-7").unwrap()
        };
        assert_eq!(make(), make());
        let other = assemble_options("X", &graph, &retrieved(&["A", "B", "C"]), 3, 99, "ex-8").unwrap();
        assert_eq!(other.options.len(), 4);
    }

    #[test]
    fn shortfall_is_an_error_naming_the_gap() {
        let graph = DiffDxGraph::default();
        match assemble_options("X", &graph, &retrieved(&["A", "B"]), 7, 0, "e") {
            Err(Error::InsufficientDistractors { needed, found, .. }) => {
                assert_eq!(needed, 7);
                assert_eq!(found, 2);
            }
            other => panic!("expected shortfall, got {other:?}"),
        }
    }

    #[test]
    fn all_available_diffdx_appear_when_fewer_than_n() {
        let (graph, _) = graph_from("T\tD1\nT\tD2\nT\tD3\n");
        let set =
            assemble_options("T", &graph, &retrieved(&["R1", "R2", "R3", "R4"]), 5, 3, "e").unwrap();
        for dx in ["D1", "D2", "D3"] {
            assert!(set.options.iter().any(|o| o == dx), "missing {dx}");
        }
    }

    #[test]
    fn duplicate_retrieved_titles_are_skipped() {
        let (graph, _) = graph_from("T\tD1\n");
        let set = assemble_options(
            "T",
            &graph,
            &retrieved(&["d1", "R1", "r1", "R2", "R3"]),
            4,
            0,
            "e",
        )
        .unwrap();
        let norms: HashSet<String> = set.options.iter().map(|o| norm_title(o)).collect();
        assert_eq!(norms.len(), 5);
    }

    #[test]
    fn perfect_ranker_has_unit_precision() {
        let (graph, _) = graph_from("A\ta1\nA\ta2\nA\ta3\nB\tb1\nB\tb2\nB\tb3\n");
        let report = eval_retrieval(&graph, |q| retrieved(match q {
            "A" => &["a1", "a2", "a3"],
            _ => &["b1", "b2", "b3"],
        }), 3)
        .unwrap();
        assert_eq!(report.precision_at_k, BigRational::new(1.into(), 1.into()));
        assert_eq!(report.recall_at_k, BigRational::new(1.into(), 1.into()));
        assert_eq!(report.queries_evaluated, 2);
    }

    #[test]
    fn disjoint_ranker_scores_zero() {
        let (graph, _) = graph_from("A\ta1\nB\tb1\n");
        let report = eval_retrieval(&graph, |_| retrieved(&["x", "y", "z"]), 3).unwrap();
        assert!(report.precision_at_k.is_zero());
        assert!(report.recall_at_k.is_zero());
    }

    #[test]
    fn empty_graph_is_an_error() {
        let graph = DiffDxGraph::default();
        assert!(matches!(
            eval_retrieval(&graph, |_| Vec::new(), 3),
            Err(Error::EmptyGraph)
        ));
    }

    /// Five queries with hand-computed metrics:
    ///   A: |gold|=4, 2 hits  -> p 2/3, r 1/2
    ///   B: |gold|=1, 1 hit   -> p 1/3, r 1
    ///   C: |gold|=2, 0 hits  -> 0, 0
    ///   D: |gold|=3, 3 hits  -> p 1,   r 1
    ///   E: |gold|=5, 1 hit   -> p 1/3, r 1/5
    /// means: precision 7/15, recall 27/50.
    #[test]
    fn five_query_toy_graph_matches_hand_computation() {
        let edges = "A\ta1\nA\ta2\nA\ta3\nA\ta4\n\
                     B\tb1\n\
                     C\tc1\nC\tc2\n\
                     D\td1\nD\td2\nD\td3\n\
                     E\te1\nE\te2\nE\te3\nE\te4\nE\te5\n";
        let (graph, _) = graph_from(edges);
        let table = |q: &str| -> Vec<String> {
            retrieved(match q {
                "A" => &["a1", "x", "a2"],
                "B" => &["x", "b1", "y"],
                "C" => &["x", "y", "z"],
                "D" => &["d3", "d1", "d2"],
                "E" => &["e5", "x", "y"],
                _ => &[],
            })
        };
        let report = eval_retrieval(&graph, table, 3).unwrap();
        assert_eq!(report.precision_at_k, BigRational::new(7.into(), 15.into()));
        assert_eq!(report.recall_at_k, BigRational::new(27.into(), 50.into()));
        assert_eq!(report.queries_evaluated, 5);
    }
}
