//! Command-line wiring over the library.
//!
//! One subcommand per pipeline stage, all reading the same layered
//! configuration: built-in defaults, then the `--config` file, then
//! flags. Exit codes are part of the interface: 0 success, 1 data
//! error, 2 usage or configuration error, 3 backend or network error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};

use crate::backend::{build_backend, BackendConfig, BackendError, BackendKind};
use crate::bpe::{train_bpe, BpeError, Vocab};
use crate::config::{AppConfig, ConfigError};
use crate::corpus::{
    CorpusError, CorpusStore, KnowledgeDoc, LocalDirAdapter, SourceAdapter, SourceKind,
};
use crate::dataset::{
    canonicalize_label, format_dataset, format_record, load_templates, read_instruction_records,
    write_instruction_records, DatasetError, InstructionRecord, LabelScheme, RawRecord,
};
use crate::eval::{
    render_report, run_eval, write_predictions, AugmentBudget, EvalError, EvalPipeline,
    NamedReport, ReportFormat,
};
use crate::lm::{train, write_loss_csv, Checkpoint, LmError};
use crate::retrieval::{preprocess_query, retrieve_context, write_traces, RetrievalError, RetrievalTrace};

/// A command failure carrying its exit code.
#[derive(Debug)]
enum Failure {
    /// Bad input data: exit 1.
    Data(String),
    /// Bad invocation or configuration: exit 2.
    Usage(String),
    /// Backend or network trouble: exit 3.
    Backend(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Data(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Data(m) | Failure::Usage(m) | Failure::Backend(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(err: ConfigError) -> Failure {
        Failure::Usage(err.to_string())
    }
}

impl From<DatasetError> for Failure {
    fn from(err: DatasetError) -> Failure {
        Failure::Data(err.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Failure {
        Failure::Data(err.to_string())
    }
}

impl From<BpeError> for Failure {
    fn from(err: BpeError) -> Failure {
        Failure::Data(err.to_string())
    }
}

impl From<LmError> for Failure {
    fn from(err: LmError) -> Failure {
        Failure::Data(err.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(err: CorpusError) -> Failure {
        match err {
            CorpusError::NetworkFailure { .. }
            | CorpusError::AuthFailure { .. }
            | CorpusError::MalformedResponse { .. } => Failure::Backend(err.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<RetrievalError> for Failure {
    fn from(err: RetrievalError) -> Failure {
        match err {
            RetrievalError::BudgetTooSmall { .. } | RetrievalError::EmptyQuery => {
                Failure::Usage(err.to_string())
            }
            RetrievalError::Corpus(inner) => inner.into(),
            RetrievalError::Io(inner) => inner.into(),
        }
    }
}

impl From<BackendError> for Failure {
    fn from(err: BackendError) -> Failure {
        match err {
            BackendError::InvalidConfig { .. } => Failure::Usage(err.to_string()),
            BackendError::Io(inner) => inner.into(),
            BackendError::Model(inner) => inner.into(),
            BackendError::Tokenizer(inner) => inner.into(),
            other => Failure::Backend(other.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(err: EvalError) -> Failure {
        match err {
            EvalError::MissingStore => Failure::Usage(err.to_string()),
            EvalError::Retrieval(inner) => inner.into(),
            EvalError::Io(inner) => inner.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "finrag",
    version,
    about = "Retrieval-augmented financial sentiment toolkit"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file layered over the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts, overriding the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Print progress detail to stderr.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Convert raw labeled records into instruction-following JSONL.
    Format(FormatArgs),
    /// Train the byte-pair vocabulary and the small language model.
    Train(TrainArgs),
    /// Load documents into the corpus store.
    Ingest(IngestArgs),
    /// Run one retrieval query and print the context bundle.
    Retrieve(RetrieveArgs),
    /// Generate predictions for a dataset without scoring them.
    Predict(PredictArgs),
    /// Score a dataset, optionally with retrieval context.
    Eval(EvalArgs),
    /// Re-render saved evaluation reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct FormatArgs {
    /// Raw dataset, one JSON record per line.
    #[arg(long)]
    input: PathBuf,
    /// Where the formatted records go.
    #[arg(long)]
    output: PathBuf,
    /// Label scheme of the input: canonical, twitter, fiqa, or fpb.
    #[arg(long)]
    scheme: Option<String>,
    /// Instruction template file, one template per line.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Warn about malformed lines and continue instead of failing.
    #[arg(long)]
    skip_bad: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Formatted instruction dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Training epochs, overriding the configuration.
    #[arg(long)]
    epochs: Option<usize>,
    /// Tokenizer vocabulary size, overriding the configuration.
    #[arg(long)]
    vocab_size: Option<usize>,
}

#[derive(Args)]
struct IngestArgs {
    /// JSONL document file, or a directory with one document per file.
    #[arg(long)]
    input: PathBuf,
    /// Corpus store log, overriding the configuration.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Source kind stamped on directory documents.
    #[arg(long)]
    source_kind: Option<String>,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Query text, noisy market chatter welcome.
    #[arg(long)]
    query: String,
    /// Query timestamp (RFC 3339); activates the default time window.
    #[arg(long)]
    at: Option<String>,
    /// Document and unit score thresholds as "DOC,UNIT".
    #[arg(long)]
    thresholds: Option<String>,
    /// Additionally require an adjacent query token pair in candidates.
    #[arg(long)]
    phrase_matching: bool,
    /// Corpus store log, overriding the configuration.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Formatted instruction dataset to predict on.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Retrieval mode: on or off.
    #[arg(long)]
    rag: Option<String>,
    /// Backend kind: mock, toy, or http.
    #[arg(long)]
    backend: Option<String>,
    /// Model checkpoint for the toy backend.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Vocabulary for the toy backend.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Corpus store log, overriding the configuration.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Predictions file; defaults to predictions.jsonl in the output
    /// directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Formatted instruction dataset to score.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Retrieval mode: on, off, or both.
    #[arg(long)]
    rag: Option<String>,
    /// Backend kind: mock, toy, or http.
    #[arg(long)]
    backend: Option<String>,
    /// Model checkpoint for the toy backend.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Vocabulary for the toy backend.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Corpus store log, overriding the configuration.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved report JSON files, merged in order.
    #[arg(long = "input", value_name = "FILE", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Output format: markdown or json.
    #[arg(long)]
    format: Option<String>,
}

/// Parses and dispatches, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = err.exit_code();
            let _ = err.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            failure.code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Format(args) => cmd_format(&cli.global, args),
        Command::Train(args) => cmd_train(&cli.global, args),
        Command::Ingest(args) => cmd_ingest(&cli.global, args),
        Command::Retrieve(args) => cmd_retrieve(&cli.global, args),
        Command::Predict(args) => cmd_predict(&cli.global, args),
        Command::Eval(args) => cmd_eval(&cli.global, args),
        Command::Report(args) => cmd_report(&cli.global, args),
    }
}

/// Defaults, file, then global flags, in that order.
fn resolve(global: &Global) -> Result<AppConfig, Failure> {
    let mut config = AppConfig::load(global.config.as_deref())?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(out_dir) = &global.out_dir {
        config.out_dir = out_dir.clone();
    }
    Ok(config)
}

fn ensure_out_dir(config: &AppConfig) -> Result<(), Failure> {
    fs::create_dir_all(&config.out_dir)
        .map_err(|err| Failure::Data(format!("cannot create {}: {err}", config.out_dir.display())))
}

fn parse_label_scheme(text: &str) -> Result<LabelScheme, Failure> {
    match text {
        "canonical" => Ok(LabelScheme::Canonical),
        "twitter" => Ok(LabelScheme::Twitter),
        "fiqa" => Ok(LabelScheme::Fiqa),
        "fpb" => Ok(LabelScheme::Fpb),
        other => Err(Failure::Usage(format!(
            "unknown label scheme {other:?}, expected canonical, twitter, fiqa, or fpb"
        ))),
    }
}

fn parse_timestamp(text: &str) -> Result<DateTime<Utc>, Failure> {
    DateTime::parse_from_rfc3339(text)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|err| Failure::Usage(format!("invalid timestamp {text:?}: {err}")))
}

fn parse_thresholds(text: &str) -> Result<(f64, f64), Failure> {
    let bad = || {
        Failure::Usage(format!(
            "invalid thresholds {text:?}, expected two numbers as DOC,UNIT"
        ))
    };
    let (doc, unit) = text.split_once(',').ok_or_else(bad)?;
    let doc: f64 = doc.trim().parse().map_err(|_| bad())?;
    let unit: f64 = unit.trim().parse().map_err(|_| bad())?;
    Ok((doc, unit))
}

fn parse_rag_mode(text: &str, allow_both: bool) -> Result<Vec<bool>, Failure> {
    match (text, allow_both) {
        ("on", _) => Ok(vec![true]),
        ("off", _) => Ok(vec![false]),
        ("both", true) => Ok(vec![false, true]),
        _ => {
            let expected = if allow_both { "on, off, or both" } else { "on or off" };
            Err(Failure::Usage(format!(
                "invalid --rag value {text:?}, expected {expected}"
            )))
        }
    }
}

/// Opens the store named by the flag or the configuration. Without a
/// path the store is empty and in-memory; a named path must already
/// exist unless `create` is set.
fn open_store(
    flag: Option<&Path>,
    config: &AppConfig,
    create: bool,
) -> Result<CorpusStore, Failure> {
    let path = flag.or(config.corpus.store_path.as_deref());
    match path {
        None => Ok(CorpusStore::in_memory()),
        Some(p) if create || p.exists() => Ok(CorpusStore::open(p)?),
        Some(p) => Err(Failure::Usage(format!(
            "corpus store {} does not exist",
            p.display()
        ))),
    }
}

fn read_dataset(path: &Path) -> Result<Vec<InstructionRecord>, Failure> {
    if !path.exists() {
        return Err(Failure::Usage(format!(
            "dataset {} does not exist",
            path.display()
        )));
    }
    let records = read_instruction_records(BufReader::new(File::open(path)?))?;
    if records.is_empty() {
        return Err(Failure::Data(format!(
            "dataset {} contains no records",
            path.display()
        )));
    }
    Ok(records)
}

/// Rejects an http backend whose named credential variable is unset,
/// before any request could go out.
fn check_credentials(backend: &BackendConfig) -> Result<(), Failure> {
    if backend.kind == BackendKind::Http {
        if let Some(var) = &backend.credential_env {
            if std::env::var(var).is_err() {
                return Err(Failure::Usage(format!(
                    "authentication failed: environment variable {var} is not set"
                )));
            }
        }
    }
    Ok(())
}

/// Rejects a toy backend whose model files are missing.
fn check_backend_files(backend: &BackendConfig) -> Result<(), Failure> {
    if backend.kind == BackendKind::Toy {
        for (name, path) in [
            ("checkpoint", &backend.checkpoint_path),
            ("vocabulary", &backend.vocab_path),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Failure::Usage(format!(
                        "{name} file {} does not exist",
                        p.display()
                    )));
                }
            }
        }
    }
    Ok(())
}

fn cmd_format(global: &Global, args: &FormatArgs) -> Result<(), Failure> {
    let mut config = resolve(global)?;
    if let Some(scheme) = &args.scheme {
        config.dataset.label_scheme = parse_label_scheme(scheme)?;
    }
    if let Some(templates) = &args.templates {
        config.dataset.template_path = Some(templates.clone());
    }
    config.validate()?;
    if !args.input.exists() {
        return Err(Failure::Usage(format!(
            "input {} does not exist",
            args.input.display()
        )));
    }
    let templates = load_templates(config.dataset.template_path.as_deref())?;
    let scheme = config.dataset.label_scheme;
    let reader = BufReader::new(File::open(&args.input)?);

    let (records, counts, skipped) = if args.skip_bad {
        let mut records = Vec::new();
        let mut counts = [0usize; 3];
        let mut skipped = 0usize;
        let warn = |line_no: usize, message: &str| {
            eprintln!("warning: line {line_no} skipped: {message}");
        };
        for (ordinal, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = ordinal + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord = match serde_json::from_str(&line) {
                Ok(raw) => raw,
                Err(err) => {
                    warn(line_no, &err.to_string());
                    skipped += 1;
                    continue;
                }
            };
            if raw.text.trim().is_empty() {
                warn(line_no, "record text is empty");
                skipped += 1;
                continue;
            }
            let label = match canonicalize_label(&raw.label, scheme) {
                Ok(label) => label,
                Err(err) => {
                    warn(line_no, &err.to_string());
                    skipped += 1;
                    continue;
                }
            };
            counts[label.index()] += 1;
            records.push(format_record(
                &raw.text,
                label,
                &templates,
                config.seed,
                records.len() as u64,
            ));
        }
        (records, counts, skipped)
    } else {
        let (records, summary) = format_dataset(reader, scheme, &templates, config.seed)?;
        (records, [summary.negative, summary.neutral, summary.positive], 0)
    };

    write_instruction_records(&records, BufWriter::new(File::create(&args.output)?))?;
    let total = records.len();
    let mut line = format!(
        "formatted {total} records ({} negative, {} neutral, {} positive)",
        counts[0], counts[1], counts[2]
    );
    if skipped > 0 {
        line.push_str(&format!(", skipped {skipped} bad lines"));
    }
    println!("{line}");
    Ok(())
}

fn cmd_train(global: &Global, args: &TrainArgs) -> Result<(), Failure> {
    let mut config = resolve(global)?;
    if let Some(dataset) = &args.dataset {
        config.dataset.train_path = Some(dataset.clone());
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    if let Some(vocab_size) = args.vocab_size {
        config.tokenizer.vocab_size = vocab_size;
    }
    config.validate()?;
    let Some(dataset_path) = config.dataset.train_path.clone() else {
        return Err(Failure::Usage(
            "no training dataset given; pass --dataset or set dataset.train_path".to_string(),
        ));
    };
    let records = read_dataset(&dataset_path)?;
    ensure_out_dir(&config)?;
    let fingerprint = config.fingerprint();

    if global.verbose {
        eprintln!("training vocabulary on {} records", records.len());
    }
    let mut corpus_text = String::new();
    for record in &records {
        corpus_text.push_str(&record.rendered);
        corpus_text.push('\n');
    }
    let vocab = train_bpe(corpus_text.as_bytes(), config.tokenizer.vocab_size)?;

    let train_config = config.train.train_config(config.seed);
    let dims = config.train.model_dims();
    if global.verbose {
        eprintln!(
            "training model: {} epochs, batch size {}",
            train_config.epochs, train_config.batch_size
        );
    }
    let (params, curve) = train(&records, &vocab, dims, &train_config)?;

    let vocab_path = config.out_dir.join("vocab.json");
    vocab.save(BufWriter::new(File::create(&vocab_path)?), Some(&fingerprint))?;
    let checkpoint_path = config.out_dir.join("checkpoint.json");
    Checkpoint::from_parts(&params, &vocab, &train_config, Some(fingerprint.clone()))
        .save(BufWriter::new(File::create(&checkpoint_path)?))?;
    let loss_path = config.out_dir.join("loss.csv");
    write_loss_csv(&curve, Some(&fingerprint), BufWriter::new(File::create(&loss_path)?))?;

    match curve.last() {
        Some(final_nll) => println!(
            "trained {} epochs on {} records, final mean nll {:.6}",
            train_config.epochs,
            records.len(),
            final_nll
        ),
        None => println!("initialized parameters without training (0 epochs)"),
    }
    println!(
        "wrote {}, {}, {}",
        vocab_path.display(),
        checkpoint_path.display(),
        loss_path.display()
    );
    Ok(())
}

fn cmd_ingest(global: &Global, args: &IngestArgs) -> Result<(), Failure> {
    let mut config = resolve(global)?;
    if let Some(store) = &args.store {
        config.corpus.store_path = Some(store.clone());
    }
    config.validate()?;
    if config.corpus.store_path.is_none() {
        return Err(Failure::Usage(
            "no corpus store given; pass --store or set corpus.store_path".to_string(),
        ));
    }
    if !args.input.exists() {
        return Err(Failure::Usage(format!(
            "input {} does not exist",
            args.input.display()
        )));
    }
    let mut store = open_store(None, &config, true)?;

    let mut added = 0usize;
    let mut duplicates = 0usize;
    let mut errors: Vec<(usize, String)> = Vec::new();

    if args.input.is_dir() {
        let kind = match &args.source_kind {
            Some(text) => text.parse::<SourceKind>().map_err(Failure::Usage)?,
            None => SourceKind::News,
        };
        let adapter = LocalDirAdapter::new(&args.input, kind);
        for doc in adapter.search("", None)? {
            let before = store.len();
            store.ingest(doc)?;
            if store.len() > before {
                added += 1;
            } else {
                duplicates += 1;
            }
        }
    } else {
        let reader = BufReader::new(File::open(&args.input)?);
        for (ordinal, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = ordinal + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: KnowledgeDoc = match serde_json::from_str(&line) {
                Ok(doc) => doc,
                Err(err) => {
                    errors.push((line_no, err.to_string()));
                    continue;
                }
            };
            let doc = KnowledgeDoc::new(
                parsed.title,
                parsed.body,
                parsed.source_kind,
                parsed.published_at,
                parsed.url,
            );
            let before = store.len();
            match store.ingest(doc) {
                Ok(_) => {
                    if store.len() > before {
                        added += 1;
                    } else {
                        duplicates += 1;
                    }
                }
                Err(CorpusError::EmptyDocument) => {
                    errors.push((line_no, "document has no title and no body".to_string()));
                }
                Err(other) => return Err(other.into()),
            }
        }
    }

    println!("{added} ingested, {duplicates} duplicates");
    if !errors.is_empty() {
        eprintln!("{} malformed documents:", errors.len());
        for (line, message) in &errors {
            eprintln!("  line {line}: {message}");
        }
        return Err(Failure::Data(format!(
            "{} documents could not be ingested",
            errors.len()
        )));
    }
    Ok(())
}

fn cmd_retrieve(global: &Global, args: &RetrieveArgs) -> Result<(), Failure> {
    let mut config = resolve(global)?;
    if let Some(pair) = &args.thresholds {
        let (doc, unit) = parse_thresholds(pair)?;
        config.retrieval.doc_threshold = doc;
        config.retrieval.unit_threshold = unit;
    }
    if args.phrase_matching {
        config.retrieval.phrase_matching = true;
    }
    if let Some(store) = &args.store {
        config.corpus.store_path = Some(store.clone());
    }
    config.validate()?;
    let fingerprint = config.fingerprint();
    let store = open_store(None, &config, false)?;

    let mut query = preprocess_query(&args.query);
    if let Some(at) = &args.at {
        query = query.with_timestamp(parse_timestamp(at)?);
    }
    if query.tokens.is_empty() {
        println!("retrieval skipped: query has no searchable tokens");
        return Ok(());
    }

    let bundle = retrieve_context(&query, &store, &config.retrieval)?;
    if global.verbose {
        for (id, score) in &bundle.doc_scores {
            eprintln!("doc {id}: {score:.4}");
        }
    }
    if bundle.is_empty() {
        println!("(no context retrieved)");
    } else {
        println!("{}", bundle.concatenated);
    }
    let trace = RetrievalTrace::new(&query, &bundle, Some(&fingerprint));
    println!("{}", serde_json::to_string(&trace).expect("trace serializes"));

    ensure_out_dir(&config)?;
    let trace_path = config.out_dir.join("trace.jsonl");
    write_traces(
        std::slice::from_ref(&trace),
        BufWriter::new(File::create(&trace_path)?),
    )?;
    Ok(())
}

/// Shared setup of predict and eval: records, backend, budget.
struct RunSetup {
    config: AppConfig,
    records: Vec<InstructionRecord>,
    backend: Box<dyn crate::backend::CompletionBackend>,
    budget_vocab: Option<Vocab>,
}

fn setup_run(
    global: &Global,
    dataset: Option<&Path>,
    backend_kind: Option<&str>,
    checkpoint: Option<&Path>,
    vocab: Option<&Path>,
    store_flag: Option<&Path>,
) -> Result<RunSetup, Failure> {
    let mut config = resolve(global)?;
    if let Some(dataset) = dataset {
        config.dataset.eval_path = Some(dataset.to_path_buf());
    }
    if let Some(kind) = backend_kind {
        config.backend.kind = kind.parse::<BackendKind>().map_err(Failure::Usage)?;
    }
    if let Some(checkpoint) = checkpoint {
        config.backend.checkpoint_path = Some(checkpoint.to_path_buf());
    }
    if let Some(vocab) = vocab {
        config.backend.vocab_path = Some(vocab.to_path_buf());
    }
    if let Some(store) = store_flag {
        config.corpus.store_path = Some(store.to_path_buf());
    }
    config.validate()?;
    check_credentials(&config.backend)?;
    check_backend_files(&config.backend)?;

    let Some(dataset_path) = config.dataset.eval_path.clone() else {
        return Err(Failure::Usage(
            "no evaluation dataset given; pass --dataset or set dataset.eval_path".to_string(),
        ));
    };
    let records = read_dataset(&dataset_path)?;
    let backend = build_backend(&config.backend)?;
    let budget_vocab = match (config.eval.token_budget, &config.backend.vocab_path) {
        (None, _) => None,
        (Some(_), Some(path)) => Some(Vocab::load(BufReader::new(File::open(path)?))?),
        (Some(_), None) => {
            return Err(Failure::Usage(
                "eval.token_budget needs a tokenizer; set backend.vocab_path or pass --vocab"
                    .to_string(),
            ));
        }
    };
    Ok(RunSetup {
        config,
        records,
        backend,
        budget_vocab,
    })
}

/// One scoring pass; returns the report and where predictions went.
fn run_one_eval(
    setup: &RunSetup,
    store: &CorpusStore,
    rag: bool,
    predictions_path: &Path,
) -> Result<NamedReport, Failure> {
    let mut config = setup.config.clone();
    config.eval.rag = rag;
    let fingerprint = config.fingerprint();
    let pipeline = EvalPipeline {
        backend: setup.backend.as_ref(),
        rag,
        store: rag.then_some(store),
        retrieval: config.retrieval.clone(),
        completion: config.eval.completion.clone(),
        max_in_flight: config.eval.max_in_flight,
        budget: setup.budget_vocab.as_ref().and_then(|vocab| {
            config.eval.token_budget.map(|token_budget| AugmentBudget {
                token_budget,
                vocab,
            })
        }),
        config_fingerprint: Some(fingerprint),
    };
    let (report, predictions) = run_eval(&setup.records, &pipeline)?;
    write_predictions(&predictions, BufWriter::new(File::create(predictions_path)?))?;
    let name = if rag { "with retrieval" } else { "without retrieval" };
    Ok(NamedReport {
        name: name.to_string(),
        report,
    })
}

/// Applies the configurable failed-record tolerance.
fn check_error_fraction(named: &NamedReport, max_fraction: f64) -> Result<(), Failure> {
    let fraction = named.report.errors as f64 / named.report.n as f64;
    if fraction > max_fraction {
        return Err(Failure::Backend(format!(
            "{} of {} records failed ({:.3} exceeds the allowed {:.3})",
            named.report.errors, named.report.n, fraction, max_fraction
        )));
    }
    Ok(())
}

fn cmd_predict(global: &Global, args: &PredictArgs) -> Result<(), Failure> {
    let setup = setup_run(
        global,
        args.dataset.as_deref(),
        args.backend.as_deref(),
        args.checkpoint.as_deref(),
        args.vocab.as_deref(),
        args.store.as_deref(),
    )?;
    let rag = match &args.rag {
        Some(text) => parse_rag_mode(text, false)?[0],
        None => setup.config.eval.rag,
    };
    let store = if rag {
        open_store(None, &setup.config, false)?
    } else {
        CorpusStore::in_memory()
    };
    ensure_out_dir(&setup.config)?;
    let predictions_path = args
        .output
        .clone()
        .unwrap_or_else(|| setup.config.out_dir.join("predictions.jsonl"));
    let named = run_one_eval(&setup, &store, rag, &predictions_path)?;
    println!(
        "wrote {} predictions to {}",
        named.report.n,
        predictions_path.display()
    );
    check_error_fraction(&named, setup.config.eval.max_error_fraction)
}

fn cmd_eval(global: &Global, args: &EvalArgs) -> Result<(), Failure> {
    let setup = setup_run(
        global,
        args.dataset.as_deref(),
        args.backend.as_deref(),
        args.checkpoint.as_deref(),
        args.vocab.as_deref(),
        args.store.as_deref(),
    )?;
    let modes = match &args.rag {
        Some(text) => parse_rag_mode(text, true)?,
        None => vec![setup.config.eval.rag],
    };
    let store = if modes.iter().any(|rag| *rag) {
        open_store(None, &setup.config, false)?
    } else {
        CorpusStore::in_memory()
    };
    ensure_out_dir(&setup.config)?;

    let both = modes.len() > 1;
    let mut named_reports = Vec::new();
    let mut tolerance_failure = None;
    for rag in modes {
        let file_name = if both {
            if rag {
                "predictions_with_retrieval.jsonl"
            } else {
                "predictions_without_retrieval.jsonl"
            }
        } else {
            "predictions.jsonl"
        };
        let named = run_one_eval(&setup, &store, rag, &setup.config.out_dir.join(file_name))?;
        if tolerance_failure.is_none() {
            tolerance_failure =
                check_error_fraction(&named, setup.config.eval.max_error_fraction).err();
        }
        named_reports.push(named);
    }

    let markdown = render_report(&named_reports, ReportFormat::Markdown);
    let json = render_report(&named_reports, ReportFormat::Json);
    fs::write(setup.config.out_dir.join("report.md"), &markdown)?;
    fs::write(setup.config.out_dir.join("report.json"), &json)?;
    print!("{markdown}");
    match tolerance_failure {
        Some(failure) => Err(failure),
        None => Ok(()),
    }
}

fn cmd_report(global: &Global, args: &ReportArgs) -> Result<(), Failure> {
    let _ = resolve(global)?;
    let format = match &args.format {
        Some(text) => text
            .parse::<ReportFormat>()
            .map_err(Failure::Usage)?,
        None => ReportFormat::Markdown,
    };
    let mut merged: Vec<NamedReport> = Vec::new();
    for path in &args.inputs {
        if !path.exists() {
            return Err(Failure::Usage(format!(
                "report {} does not exist",
                path.display()
            )));
        }
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|err| Failure::Data(format!("{}: {err}", path.display())))?;
        let reports = value
            .get("reports")
            .cloned()
            .ok_or_else(|| Failure::Data(format!("{}: missing reports field", path.display())))?;
        let mut parsed: Vec<NamedReport> = serde_json::from_value(reports)
            .map_err(|err| Failure::Data(format!("{}: {err}", path.display())))?;
        merged.append(&mut parsed);
    }
    if merged.is_empty() {
        return Err(Failure::Data("no reports found in the given files".to_string()));
    }
    print!("{}", render_report(&merged, format));
    Ok(())
}
