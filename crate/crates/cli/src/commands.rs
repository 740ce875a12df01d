use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use forge_core::audit::{audit_dataset, AuditConfig};
use forge_core::corpus::{
    filter_records, load_corpus, parse_records, prune_short_paragraphs, CorpusStats, FilterRules,
};
use forge_core::distractors::{
    self, assemble_options, load_diffdx, retrieve_distractors, QueryMode, RetrievalEvalReport,
};
use forge_core::error::LineError;
use forge_core::generator::{
    example_id, generate_dataset, read_dataset_file, write_dataset_file, GenConfig, RunReport,
};
use forge_core::masking::Strategy;
use forge_core::retrieval::{augment_question, build_index, load_index, save_index, search};
use forge_core::tokenizer::SubwordVocab;
use forge_core::{Bm25Index, DenseVectors, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskingArg {
    Token,
    Word,
    Prob,
}

impl From<MaskingArg> for Strategy {
    fn from(arg: MaskingArg) -> Self {
        match arg {
            MaskingArg::Token => Strategy::TokenNaive,
            MaskingArg::Word => Strategy::WordNaive,
            MaskingArg::Prob => Strategy::ProbMatching,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueryArg {
    Title,
    #[value(name = "title+lead")]
    TitleLead,
}

impl From<QueryArg> for QueryMode {
    fn from(arg: QueryArg) -> Self {
        match arg {
            QueryArg::Title => QueryMode::Title,
            QueryArg::TitleLead => QueryMode::TitleLead,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IndexUnit {
    Paragraph,
    Article,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankerArg {
    Bm25,
    Dense,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value).map_err(std::io::Error::from)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Index documents for a corpus: one doc per paragraph (ids `<record>#p<i>`)
/// or one per article.
fn corpus_docs(
    records: &[forge_core::corpus::DocRecord],
    unit: IndexUnit,
) -> Vec<(String, String, String)> {
    match unit {
        IndexUnit::Paragraph => records
            .iter()
            .flat_map(|r| {
                r.paragraphs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (example_id(&r.id, i), r.title.clone(), p.clone()))
            })
            .collect(),
        IndexUnit::Article => records
            .iter()
            .map(|r| (r.id.clone(), r.title.clone(), r.paragraphs.join("\n\n")))
            .collect(),
    }
}

fn run_in_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(job))
}

// ---------------------------------------------------------------- ingest

#[derive(Args)]
pub struct IngestArgs {
    /// Raw line-delimited record file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Cleaned corpus output.
    #[arg(long)]
    pub out: PathBuf,
    /// Drop paragraphs with fewer words than this.
    #[arg(long, default_value_t = 30)]
    pub min_words: usize,
    /// Where to write ingestion statistics.
    #[arg(long)]
    pub stats: PathBuf,
}

#[derive(Serialize)]
struct IngestReport {
    stats: CorpusStats,
    parse_errors: Vec<LineError>,
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    eprintln!(
        "config: ingest in={} out={} min_words={} stats={}",
        args.input.display(),
        args.out.display(),
        args.min_words,
        args.stats.display()
    );
    let file = std::io::BufReader::new(std::fs::File::open(&args.input)?);
    let outcome = parse_records(file)?;
    for err in &outcome.errors {
        eprintln!("warning: {}: {err}", args.input.display());
    }
    let (records, stats) = filter_records(outcome.records, &FilterRules::default());
    let mut stats = stats;
    let records = prune_short_paragraphs(records, args.min_words, &mut stats);

    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    forge_core::corpus::write_records(&mut out, &records)?;
    write_json(
        &args.stats,
        &IngestReport {
            stats,
            parse_errors: outcome.errors,
        },
    )?;
    Ok(())
}

// ----------------------------------------------------------------- index

#[derive(Args)]
pub struct IndexArgs {
    /// Clean corpus file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Index output file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = forge_core::retrieval::DEFAULT_K1)]
    pub k1: f64,
    #[arg(long, default_value_t = forge_core::retrieval::DEFAULT_B)]
    pub b: f64,
    /// Indexing unit.
    #[arg(long, value_enum, default_value_t = IndexUnit::Paragraph)]
    pub unit: IndexUnit,
}

pub fn index(args: IndexArgs) -> Result<()> {
    eprintln!(
        "config: index in={} out={} k1={} b={} unit={:?}",
        args.input.display(),
        args.out.display(),
        args.k1,
        args.b,
        args.unit
    );
    let records = load_corpus(&args.input)?;
    let index: Bm25Index = build_index(corpus_docs(&records, args.unit), args.k1, args.b)?;
    eprintln!("indexed {} documents", index.doc_count());
    save_index(&index, &args.out)
}

// -------------------------------------------------------------- distract

#[derive(Args)]
pub struct DistractArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub diffdx: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Distractors per title.
    #[arg(long, default_value_t = 7)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Option-set output file (one JSON object per title).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = QueryArg::TitleLead)]
    pub query: QueryArg,
    /// Add reverse diffdx edges.
    #[arg(long)]
    pub symmetrize: bool,
}

#[derive(Serialize)]
struct TitleOptions<'a> {
    id: &'a str,
    title: &'a str,
    options: &'a [String],
    correct_index: usize,
    provenance: &'a [distractors::OptionProvenance],
}

pub fn distract(args: DistractArgs) -> Result<()> {
    eprintln!(
        "config: distract corpus={} diffdx={} index={} n={} seed={} query={:?} symmetrize={}",
        args.corpus.display(),
        args.diffdx.display(),
        args.index.display(),
        args.n,
        args.seed,
        args.query,
        args.symmetrize
    );
    let records = load_corpus(&args.corpus)?;
    let index: Bm25Index = load_index(&args.index)?;
    let (mut diffdx, report) = load_diffdx(&args.diffdx)?;
    report_diffdx(&args.diffdx, &report);
    if args.symmetrize {
        diffdx.symmetrize();
    }

    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    let mut shortfalls = 0usize;
    for record in &records {
        let lead = record.paragraphs.first().map(String::as_str).unwrap_or("");
        let pool = args.n + diffdx.diffdx_for(&record.title).len();
        let retrieved = retrieve_distractors(
            &record.title,
            lead,
            &index,
            pool,
            &HashSet::new(),
            args.query.into(),
        );
        match assemble_options(&record.title, &diffdx, &retrieved, args.n, args.seed, &record.id) {
            Ok(set) => {
                serde_json::to_writer(
                    &mut out,
                    &TitleOptions {
                        id: &record.id,
                        title: &record.title,
                        options: &set.options,
                        correct_index: set.correct_index,
                        provenance: &set.provenance,
                    },
                )
                .map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
            Err(err) => {
                shortfalls += 1;
                eprintln!("warning: {err}");
            }
        }
    }
    if shortfalls > 0 {
        eprintln!("{shortfalls} titles skipped for insufficient distractors");
    }
    Ok(())
}

fn report_diffdx(path: &Path, report: &distractors::DiffDxLoadReport) {
    for err in &report.line_errors {
        eprintln!("warning: {}: {err}", path.display());
    }
    if report.self_edges_dropped > 0 {
        eprintln!("warning: dropped {} self-edges", report.self_edges_dropped);
    }
    eprintln!(
        "diffdx: {} edges ({} duplicates collapsed)",
        report.edges, report.duplicates_dropped
    );
}

// -------------------------------------------------------------- generate

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub diffdx: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, value_enum)]
    pub masking: MaskingArg,
    /// Distractors per example.
    #[arg(long, default_value_t = 7)]
    pub n: usize,
    /// Generation seed; mandatory so releases are reproducible.
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Subword vocabulary (required for --masking token).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value = forge_core::masking::DEFAULT_SENTINEL)]
    pub mask_sentinel: String,
    #[arg(long, default_value_t = 30)]
    pub min_words: usize,
    #[arg(long, value_enum, default_value_t = QueryArg::TitleLead)]
    pub query: QueryArg,
    #[arg(long)]
    pub symmetrize: bool,
    /// One example per page instead of one per paragraph.
    #[arg(long)]
    pub per_page: bool,
    /// Worker threads (0 = rayon default). Output is identical for every
    /// setting.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Serialize)]
struct GenerateReport {
    strategy: &'static str,
    n_distractors: usize,
    min_words: usize,
    seed: u64,
    mask_sentinel: String,
    per_page: bool,
    run: RunReport,
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let strategy: Strategy = args.masking.into();
    eprintln!(
        "config: generate corpus={} diffdx={} index={} masking={} n={} seed={} out={} report={} \
         vocab={} mask_sentinel={:?} min_words={} query={:?} symmetrize={} per_page={} threads={}",
        args.corpus.display(),
        args.diffdx.display(),
        args.index.display(),
        strategy.name(),
        args.n,
        args.seed,
        args.out.display(),
        args.report.display(),
        args.vocab.as_ref().map_or("-".into(), |p| p.display().to_string()),
        args.mask_sentinel,
        args.min_words,
        args.query,
        args.symmetrize,
        args.per_page,
        args.threads
    );

    let records = load_corpus(&args.corpus)?;
    let index: Bm25Index = load_index(&args.index)?;
    let (mut diffdx, dx_report) = load_diffdx(&args.diffdx)?;
    report_diffdx(&args.diffdx, &dx_report);
    if args.symmetrize {
        diffdx.symmetrize();
    }
    let vocab = args.vocab.as_ref().map(SubwordVocab::load).transpose()?;
    if strategy == Strategy::TokenNaive && vocab.is_none() {
        return Err(Error::InvalidInput(
            "--masking token requires --vocab".into(),
        ));
    }

    let mut config = GenConfig::new(strategy, args.seed);
    config.n_distractors = args.n;
    config.min_words = args.min_words;
    config.sentinel = args.mask_sentinel.clone();
    config.query_mode = args.query.into();
    config.per_page = args.per_page;

    let (dataset, run) = run_in_pool(args.threads, || {
        generate_dataset(&records, &diffdx, &index, &config, vocab.as_ref())
    })??;
    eprintln!(
        "generated {} examples ({} skipped)",
        run.examples_out,
        run.skipped.values().sum::<u64>()
    );
    write_dataset_file(&args.out, &dataset)?;
    write_json(
        &args.report,
        &GenerateReport {
            strategy: strategy.name(),
            n_distractors: args.n,
            min_words: args.min_words,
            seed: args.seed,
            mask_sentinel: args.mask_sentinel,
            per_page: args.per_page,
            run,
        },
    )
}

// ----------------------------------------------------------------- audit

#[derive(Args)]
pub struct AuditArgs {
    /// Dataset to audit.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Train fraction of the id-hash split.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value = forge_core::masking::DEFAULT_SENTINEL)]
    pub mask_sentinel: String,
}

pub fn audit(args: AuditArgs) -> Result<()> {
    eprintln!(
        "config: audit in={} split={} epochs={} lr={} seed={} report={} mask_sentinel={:?}",
        args.input.display(),
        args.split,
        args.epochs,
        args.lr,
        args.seed,
        args.report.display(),
        args.mask_sentinel
    );
    if !(0.0..1.0).contains(&args.split) || args.split == 0.0 {
        return Err(Error::InvalidInput("--split must be in (0, 1)".into()));
    }
    let dataset = read_dataset_file(&args.input)?;
    let config = AuditConfig {
        split_fraction: args.split,
        epochs: args.epochs,
        learning_rate: args.lr,
        seed: args.seed,
        sentinel: args.mask_sentinel,
    };
    let report = audit_dataset::<f64>(&dataset, &config)?;
    eprintln!(
        "audit: accuracy {:.4} vs chance {:.4} over {} eval examples",
        report.accuracy, report.chance, report.n_eval
    );
    write_json(&args.report, &report)
}

// -------------------------------------------------------- eval-retrieval

#[derive(Args)]
pub struct EvalRetrievalArgs {
    #[arg(long)]
    pub diffdx: PathBuf,
    /// BM25 index (required for --ranker bm25).
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Dense vectors file (required for --ranker dense).
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = RankerArg::Bm25)]
    pub ranker: RankerArg,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub symmetrize: bool,
}

#[derive(Serialize)]
struct EvalReportJson {
    ranker: &'static str,
    k: usize,
    queries_evaluated: usize,
    precision_at_k: f64,
    recall_at_k: f64,
    precision_exact: String,
    recall_exact: String,
}

fn eval_report_json(ranker: &'static str, report: &RetrievalEvalReport) -> EvalReportJson {
    EvalReportJson {
        ranker,
        k: report.k,
        queries_evaluated: report.queries_evaluated,
        precision_at_k: report.precision_f64(),
        recall_at_k: report.recall_f64(),
        precision_exact: report.precision_at_k.to_string(),
        recall_exact: report.recall_at_k.to_string(),
    }
}

pub fn eval_retrieval(args: EvalRetrievalArgs) -> Result<()> {
    eprintln!(
        "config: eval-retrieval diffdx={} k={} ranker={:?} symmetrize={}",
        args.diffdx.display(),
        args.k,
        args.ranker,
        args.symmetrize
    );
    let (mut diffdx, dx_report) = load_diffdx(&args.diffdx)?;
    report_diffdx(&args.diffdx, &dx_report);
    if args.symmetrize {
        diffdx.symmetrize();
    }
    let slack = args.k + 8;

    let (name, report) = match args.ranker {
        RankerArg::Bm25 => {
            let path = args.index.as_ref().ok_or_else(|| {
                Error::InvalidInput("--ranker bm25 requires --index".into())
            })?;
            let index: Bm25Index = load_index(path)?;
            let ranker = |title: &str| -> Vec<String> {
                let mut seen = HashSet::new();
                let mut out = Vec::new();
                let self_norm = title.trim().to_lowercase();
                for hit in search(&index, title, index.doc_count()) {
                    let candidate = &index.doc(&hit.doc_id).expect("hit from index").title;
                    let norm = candidate.trim().to_lowercase();
                    if norm == self_norm || !seen.insert(norm) {
                        continue;
                    }
                    out.push(candidate.clone());
                    if out.len() == slack {
                        break;
                    }
                }
                out
            };
            ("bm25", distractors::eval_retrieval(&diffdx, ranker, args.k)?)
        }
        RankerArg::Dense => {
            let path = args.vectors.as_ref().ok_or_else(|| {
                Error::InvalidInput("--ranker dense requires --vectors".into())
            })?;
            let vectors: DenseVectors = DenseVectors::load(path)?;
            let ranker = |title: &str| -> Vec<String> {
                let Some(query) = vectors.get(title) else {
                    return Vec::new();
                };
                let exclusions: HashSet<String> = [title.to_string()].into();
                forge_core::retrieval::dense_search(&vectors, query, slack, &exclusions)
                    .map(|hits| hits.into_iter().map(|h| h.doc_id).collect())
                    .unwrap_or_default()
            };
            ("dense", distractors::eval_retrieval(&diffdx, ranker, args.k)?)
        }
    };
    eprintln!(
        "{}: precision@{} {:.4} recall@{} {:.4} over {} queries",
        name, args.k, report.precision_f64(), args.k, report.recall_f64(), report.queries_evaluated
    );
    write_json(&args.report, &eval_report_json(name, &report))
}

// --------------------------------------------------------------- augment

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Dataset whose questions get knowledge appended.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 256)]
    pub max_words: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn augment(args: AugmentArgs) -> Result<()> {
    eprintln!(
        "config: augment index={} in={} k={} max_words={} out={}",
        args.index.display(),
        args.input.display(),
        args.k,
        args.max_words,
        args.out.display()
    );
    let index: Bm25Index = load_index(&args.index)?;
    let mut dataset = read_dataset_file(&args.input)?;
    for example in &mut dataset {
        example.question = augment_question(&example.question, &index, args.k, args.max_words);
    }
    write_dataset_file(&args.out, &dataset)
}
