//! Query cleaning, overlap scoring, and context retrieval.
//!
//! A raw headline is cleaned of tickers, mentions, and URLs, then
//! reduced to a content-token set. Retrieval keeps corpus documents
//! whose token overlap with the query clears a document threshold,
//! splits the survivors into units (title, paragraphs, bullets), and
//! keeps units clearing a second threshold. The kept unit texts,
//! joined in rank order, become the context bundle handed to the
//! prompt builder.
//!
//! Both filters compare with strict `>`, so a score exactly at a
//! threshold is excluded.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpe::Vocab;
use crate::corpus::{CorpusError, CorpusStore, KnowledgeDoc, TimeRange};
use crate::text::{token_set, tokenize};

/// Default threshold a document's overlap score must exceed.
pub const DOC_THRESHOLD: f64 = 0.8;
/// Default threshold a unit's overlap score must exceed.
pub const UNIT_THRESHOLD: f64 = 0.7;

/// Separator between unit texts in the concatenated context.
pub const UNIT_SEPARATOR: &str = " ";

#[derive(Debug, Error)]
pub enum RetrievalError {
    /// The query has no content tokens to match on.
    #[error("query has no content tokens")]
    EmptyQuery,
    /// The token budget cannot fit even the bare query.
    #[error("token budget {budget} cannot fit the query, which needs {required}")]
    BudgetTooSmall { required: usize, budget: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

static URL_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"https?://\S+").expect("url pattern compiles"));
static MENTION_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"@[A-Za-z0-9_]+").expect("mention pattern compiles"));
static EXCHANGE_PATTERN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(?:NYSE|NASDAQ|AMEX|ARCA|OTC|OTCMKTS|LSE|TSX|TSXV|ASX|HKEX|SSE|SZSE|FRA|SWX|NSE|BSE|EURONEXT):\s*([A-Za-z0-9.]+)",
    )
    .expect("exchange pattern compiles")
});
static CASHTAG_PATTERN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\$([A-Za-z][A-Za-z0-9]*(?:\.[A-Za-z]+)?)").expect("cashtag pattern compiles")
});
static SPACE_RUN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s+").expect("space pattern compiles"));

/// A cleaned query ready for retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub raw: String,
    pub cleaned: String,
    pub tokens: BTreeSet<String>,
    pub timestamp: Option<DateTime<Utc>>,
}

impl Query {
    pub fn with_timestamp(mut self, timestamp: DateTime<Utc>) -> Query {
        self.timestamp = Some(timestamp);
        self
    }
}

/// Strips URLs and @mentions, reduces cashtags and exchange-prefixed
/// symbols to the bare ticker, and tokenizes what remains. `cleaned`
/// keeps the original casing; the token set is lowercased. The token
/// set is empty only when the input was all noise, in which case the
/// caller skips retrieval.
pub fn preprocess_query(raw: &str) -> Query {
    let cleaned = URL_PATTERN.replace_all(raw, "");
    let cleaned = MENTION_PATTERN.replace_all(&cleaned, "");
    let cleaned = EXCHANGE_PATTERN.replace_all(&cleaned, "$1");
    let cleaned = CASHTAG_PATTERN.replace_all(&cleaned, "$1");
    let cleaned = SPACE_RUN.replace_all(&cleaned, " ").trim().to_string();
    let tokens = token_set(&cleaned);
    Query {
        raw: raw.to_string(),
        cleaned,
        tokens,
        timestamp: None,
    }
}

/// Overlap coefficient of two sets: the intersection size over the
/// smaller set's size. Empty input on either side scores 0.0, which
/// fails every threshold.
pub fn overlap<T: Ord>(x: &BTreeSet<T>, y: &BTreeSet<T>) -> f64 {
    if x.is_empty() || y.is_empty() {
        return 0.0;
    }
    let shared = x.intersection(y).count();
    shared as f64 / x.len().min(y.len()) as f64
}

/// Splits a document into scoring units: the title first, then body
/// segments separated by blank lines or by bullet-marker lines. A
/// bullet marker (`-`, `*`, `•` followed by whitespace) starts a new
/// unit and is stripped. Lines inside a unit are joined with single
/// spaces; empty units are dropped.
pub fn segment_units(doc: &KnowledgeDoc) -> Vec<String> {
    fn flush(units: &mut Vec<String>, current: &mut Vec<&str>) {
        let text = current.join(" ").trim().to_string();
        if !text.is_empty() {
            units.push(text);
        }
        current.clear();
    }
    let mut units = Vec::new();
    let title = doc.title.trim();
    if !title.is_empty() {
        units.push(title.to_string());
    }
    let mut current: Vec<&str> = Vec::new();
    for line in doc.body.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut units, &mut current);
            continue;
        }
        if let Some(rest) = strip_bullet_marker(trimmed) {
            flush(&mut units, &mut current);
            current.push(rest);
        } else {
            current.push(trimmed);
        }
    }
    flush(&mut units, &mut current);
    units
}

fn strip_bullet_marker(line: &str) -> Option<&str> {
    for marker in ['-', '*', '\u{2022}'] {
        if let Some(rest) = line.strip_prefix(marker) {
            if rest.starts_with(char::is_whitespace) {
                return Some(rest.trim_start());
            }
        }
    }
    None
}

/// One kept unit of context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextUnit {
    pub text: String,
    pub parent_doc_id: String,
    pub unit_index: usize,
    pub unit_score: f64,
}

/// The retrieval result for one query.
///
/// `doc_scores` records every candidate document's overlap score,
/// passing or not, so a trace can show what was considered. `units`
/// holds only the survivors, ordered by document rank and then by
/// position within the document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextBundle {
    pub units: Vec<ContextUnit>,
    pub doc_scores: BTreeMap<String, f64>,
    pub concatenated: String,
}

impl ContextBundle {
    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Checks the bundle's own records against the thresholds it was
    /// supposedly built with.
    pub fn satisfies_thresholds(&self, doc_threshold: f64, unit_threshold: f64) -> bool {
        self.units.iter().all(|unit| {
            unit.unit_score > unit_threshold
                && self
                    .doc_scores
                    .get(&unit.parent_doc_id)
                    .is_some_and(|score| *score > doc_threshold)
        })
    }
}

/// Knobs for [`retrieve_context`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalOptions {
    pub doc_threshold: f64,
    pub unit_threshold: f64,
    /// Additionally require candidates to contain an adjacent token
    /// pair of the query.
    pub phrase_matching: bool,
    /// Explicit publication window. When absent and the query has a
    /// timestamp, the default window around it applies; otherwise
    /// candidates are not time-filtered.
    #[serde(skip)]
    pub time_range: Option<TimeRange>,
}

impl Default for RetrievalOptions {
    fn default() -> RetrievalOptions {
        RetrievalOptions {
            doc_threshold: DOC_THRESHOLD,
            unit_threshold: UNIT_THRESHOLD,
            phrase_matching: false,
            time_range: None,
        }
    }
}

/// Runs the two-step filter over the store.
///
/// Candidate documents come from the index (any shared token). A
/// document survives if its whole-document overlap with the query
/// exceeds `doc_threshold`; within surviving documents, units whose
/// own overlap exceeds `unit_threshold` are kept. Surviving documents
/// rank by score, ties by id, and a query matching nothing yields an
/// empty bundle rather than an error.
pub fn retrieve_context(
    query: &Query,
    store: &CorpusStore,
    options: &RetrievalOptions,
) -> Result<ContextBundle, RetrievalError> {
    if query.tokens.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let range = options
        .time_range
        .or_else(|| query.timestamp.map(TimeRange::default_window));
    let mut candidates = store.query_candidates(&query.tokens, range.as_ref())?;
    if options.phrase_matching {
        let sequence = tokenize(&query.cleaned);
        candidates = store.filter_phrase_candidates(candidates, &sequence);
    }
    let scored: Vec<(&KnowledgeDoc, f64, Vec<(usize, String, f64)>)> = candidates
        .par_iter()
        .map(|doc| {
            let doc_score = overlap(&query.tokens, &doc.token_set());
            let kept_units = if doc_score > options.doc_threshold {
                segment_units(doc)
                    .into_iter()
                    .enumerate()
                    .map(|(index, text)| {
                        let unit_score = overlap(&query.tokens, &token_set(&text));
                        (index, text, unit_score)
                    })
                    .filter(|(_, _, score)| *score > options.unit_threshold)
                    .collect()
            } else {
                Vec::new()
            };
            (*doc, doc_score, kept_units)
        })
        .collect();
    let mut doc_scores = BTreeMap::new();
    for (doc, score, _) in &scored {
        doc_scores.insert(doc.id.clone(), *score);
    }
    let mut surviving: Vec<&(&KnowledgeDoc, f64, Vec<(usize, String, f64)>)> = scored
        .iter()
        .filter(|(_, score, _)| *score > options.doc_threshold)
        .collect();
    surviving.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("overlap scores are finite")
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    let mut units = Vec::new();
    for (doc, _, kept) in surviving {
        for (index, text, score) in kept {
            units.push(ContextUnit {
                text: text.clone(),
                parent_doc_id: doc.id.clone(),
                unit_index: *index,
                unit_score: *score,
            });
        }
    }
    let concatenated = units
        .iter()
        .map(|unit| unit.text.as_str())
        .collect::<Vec<_>>()
        .join(UNIT_SEPARATOR);
    Ok(ContextBundle {
        units,
        doc_scores,
        concatenated,
    })
}

/// Combines the bundle with the query text for the prompt.
///
/// With context the result is `Context: {units}\nNews: {query}`; an
/// empty bundle passes the query text through untouched. When the
/// rendering exceeds `token_budget` under `vocab`, trailing units are
/// dropped whole until it fits. The query itself is never cut; a
/// budget below the bare query fails.
pub fn augment_query(
    query: &Query,
    bundle: &ContextBundle,
    token_budget: usize,
    vocab: &Vocab,
) -> Result<String, RetrievalError> {
    let required = vocab.encode(&query.cleaned).len();
    if required > token_budget {
        return Err(RetrievalError::BudgetTooSmall {
            required,
            budget: token_budget,
        });
    }
    let mut kept = bundle.units.len();
    while kept > 0 {
        let context = bundle.units[..kept]
            .iter()
            .map(|unit| unit.text.as_str())
            .collect::<Vec<_>>()
            .join(UNIT_SEPARATOR);
        let rendered = format!("Context: {context}\nNews: {}", query.cleaned);
        if vocab.encode(&rendered).len() <= token_budget {
            return Ok(rendered);
        }
        kept -= 1;
    }
    Ok(query.cleaned.clone())
}

/// Audit record of one retrieval, one JSONL line per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
    pub query: String,
    pub query_tokens: Vec<String>,
    pub doc_scores: BTreeMap<String, f64>,
    pub kept_units: Vec<ContextUnit>,
    pub bundle_text: String,
}

impl RetrievalTrace {
    pub fn new(query: &Query, bundle: &ContextBundle, fingerprint: Option<&str>) -> RetrievalTrace {
        RetrievalTrace {
            config_fingerprint: fingerprint.map(|fp| fp.to_string()),
            query: query.raw.clone(),
            query_tokens: query.tokens.iter().cloned().collect(),
            doc_scores: bundle.doc_scores.clone(),
            kept_units: bundle.units.clone(),
            bundle_text: bundle.concatenated.clone(),
        }
    }
}

/// Writes traces as JSONL.
pub fn write_traces<W: io::Write>(traces: &[RetrievalTrace], mut out: W) -> io::Result<()> {
    for trace in traces {
        let line = serde_json::to_string(trace).expect("trace serializes");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use crate::corpus::SourceKind;

    const FIXTURE: &str = include_str!("../tests/fixtures/corpus.jsonl");

    fn fixture_store() -> CorpusStore {
        let mut store = CorpusStore::in_memory();
        let summary = store.ingest_jsonl(FIXTURE.as_bytes()).unwrap();
        assert_eq!(summary.added, 5);
        store
    }

    fn fixture_query() -> Query {
        preprocess_query("$ENR - Energizer shakes off JPMorgan\u{2019}s bear call.")
    }

    fn doc_id_by_title(store: &CorpusStore, title: &str) -> String {
        store
            .docs()
            .find(|d| d.title == title)
            .unwrap_or_else(|| panic!("no fixture doc titled {title:?}"))
            .id
            .clone()
    }

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn preprocessing_keeps_tickers_and_drops_noise() {
        let query = fixture_query();
        assert_eq!(
            query.cleaned,
            "ENR - Energizer shakes off JPMorgan\u{2019}s bear call."
        );
        assert_eq!(
            query.tokens,
            set(&["bear", "call", "energizer", "enr", "jpmorgan", "off", "shakes"])
        );
    }

    #[test]
    fn all_noise_input_yields_no_tokens() {
        let query = preprocess_query("https://x.co/abc");
        assert!(query.tokens.is_empty());
        assert_eq!(query.cleaned, "");
        let query = preprocess_query("@sometrader https://t.co/xyz $");
        assert!(query.tokens.is_empty());
    }

    #[test]
    fn case_folding_collapses_ticker_variants() {
        let query = preprocess_query("AAPL aapl Aapl");
        assert_eq!(query.tokens, set(&["aapl"]));
    }

    #[test]
    fn exchange_prefixes_and_mentions_are_stripped() {
        let query = preprocess_query("@analyst says NYSE:ENR and nasdaq:AAPL look strong");
        assert_eq!(query.cleaned, "says ENR and AAPL look strong");
        assert_eq!(query.tokens, set(&["says", "enr", "aapl", "look", "strong"]));
    }

    #[test]
    fn overlap_matches_its_definition() {
        let abc = set(&["a", "b", "c"]);
        let cd = set(&["c", "d"]);
        assert_eq!(overlap(&abc, &abc), 1.0);
        assert_eq!(overlap(&abc, &cd), 0.5);
        assert_eq!(overlap(&set(&["a", "b"]), &cd), 0.0);
        assert_eq!(overlap(&BTreeSet::<String>::new(), &set(&["a"])), 0.0);
    }

    #[test]
    fn overlap_agrees_with_brute_force_on_random_pairs() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..1000 {
            let draw = |rng: &mut StdRng| -> BTreeSet<u32> {
                let size = rng.random_range(0..12);
                (0..size).map(|_| rng.random_range(0..20)).collect()
            };
            let x = draw(&mut rng);
            let y = draw(&mut rng);
            let expected = if x.is_empty() || y.is_empty() {
                0.0
            } else {
                let shared = x.iter().filter(|t| y.contains(t)).count();
                shared as f64 / x.len().min(y.len()) as f64
            };
            let got = overlap(&x, &y);
            assert_eq!(got, expected);
            assert_eq!(got, overlap(&y, &x));
            assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn segmentation_counts_paragraphs_and_bullets() {
        let two_paragraphs = KnowledgeDoc::new(
            "Title here",
            "First paragraph\nwith a wrapped line.\n\nSecond paragraph.",
            SourceKind::News,
            None,
            None,
        );
        let units = segment_units(&two_paragraphs);
        assert_eq!(
            units,
            vec![
                "Title here",
                "First paragraph with a wrapped line.",
                "Second paragraph."
            ]
        );

        let title_only = KnowledgeDoc::new("Just a title", "", SourceKind::News, None, None);
        assert_eq!(segment_units(&title_only), vec!["Just a title"]);

        let bullets = KnowledgeDoc::new(
            "Note",
            "Opening remarks.\n- bullet one\n- bullet two",
            SourceKind::News,
            None,
            None,
        );
        assert_eq!(
            segment_units(&bullets),
            vec!["Note", "Opening remarks.", "bullet one", "bullet two"]
        );
    }

    #[test]
    fn segmentation_edge_cases() {
        let starry = KnowledgeDoc::new(
            "Memo",
            "* starred item\n\n\n\n\u{2022} dotted item\n-3% is not a bullet",
            SourceKind::News,
            None,
            None,
        );
        assert_eq!(
            segment_units(&starry),
            vec!["Memo", "starred item", "dotted item -3% is not a bullet"]
        );

        let untitled = KnowledgeDoc::new("", "Only a body.", SourceKind::News, None, None);
        assert_eq!(segment_units(&untitled), vec!["Only a body."]);

        let separators = KnowledgeDoc::new("T", "a\n\nb\n\nc", SourceKind::News, None, None);
        assert_eq!(segment_units(&separators).len(), 4);
    }

    #[test]
    fn fixture_retrieval_keeps_exactly_the_traced_unit() {
        let store = fixture_store();
        let query = fixture_query();
        let bundle = retrieve_context(&query, &store, &RetrievalOptions::default()).unwrap();

        let coverage = doc_id_by_title(&store, "Energizer analyst call coverage update");
        let recap = doc_id_by_title(&store, "Energizer JPMorgan coverage recap today");
        let worries = doc_id_by_title(&store, "Energizer shakes off JPMorgan worries");
        let model = doc_id_by_title(&store, "JPMorgan models Energizer battery sales");

        assert_eq!(bundle.doc_scores.len(), 4);
        assert_eq!(bundle.doc_scores[&coverage], 1.0);
        assert_eq!(bundle.doc_scores[&recap], 6.0 / 7.0);
        assert_eq!(bundle.doc_scores[&worries], 4.0 / 5.0);
        assert_eq!(bundle.doc_scores[&model], 2.0 / 5.0);

        assert_eq!(bundle.units.len(), 1);
        let unit = &bundle.units[0];
        assert_eq!(unit.parent_doc_id, coverage);
        assert_eq!(unit.unit_index, 1);
        assert_eq!(unit.unit_score, 6.0 / 7.0);
        assert_eq!(
            unit.text,
            "JPMorgan hikes Energizer Holdings NYSE:ENR to Neutral from Underweight as Energizer shakes off the bear thesis."
        );
        assert_eq!(bundle.concatenated, unit.text);
        assert!(bundle.satisfies_thresholds(DOC_THRESHOLD, UNIT_THRESHOLD));
    }

    #[test]
    fn score_exactly_at_the_threshold_is_excluded() {
        let store = fixture_store();
        let query = fixture_query();
        let worries = doc_id_by_title(&store, "Energizer shakes off JPMorgan worries");

        let bundle = retrieve_context(&query, &store, &RetrievalOptions::default()).unwrap();
        assert_eq!(bundle.doc_scores[&worries], 0.8);
        assert!(bundle.units.iter().all(|u| u.parent_doc_id != worries));

        let mut looser = RetrievalOptions::default();
        looser.doc_threshold = 0.79;
        let bundle = retrieve_context(&query, &store, &looser).unwrap();
        assert!(bundle.units.iter().any(|u| u.parent_doc_id == worries));
    }

    #[test]
    fn retrieval_is_deterministic() {
        let store = fixture_store();
        let query = fixture_query();
        let options = RetrievalOptions::default();
        let first = retrieve_context(&query, &store, &options).unwrap();
        let second = retrieve_context(&query, &store, &options).unwrap();
        assert_eq!(
            serde_json::to_string(&first).unwrap(),
            serde_json::to_string(&second).unwrap()
        );
    }

    #[test]
    fn raising_thresholds_never_adds_units() {
        let store = fixture_store();
        let query = fixture_query();
        let keys = |bundle: &ContextBundle| -> BTreeSet<(String, usize)> {
            bundle
                .units
                .iter()
                .map(|u| (u.parent_doc_id.clone(), u.unit_index))
                .collect()
        };
        let grid = [0.0, 0.1, 0.3, 0.5, 0.7, 0.75, 0.8, 0.85, 0.9, 1.0];
        for pair in grid.windows(2) {
            for unit_threshold in grid {
                let mut low = RetrievalOptions::default();
                low.doc_threshold = pair[0];
                low.unit_threshold = unit_threshold;
                let mut high = low.clone();
                high.doc_threshold = pair[1];
                let low_units = keys(&retrieve_context(&query, &store, &low).unwrap());
                let high_units = keys(&retrieve_context(&query, &store, &high).unwrap());
                assert!(high_units.is_subset(&low_units));
            }
        }
    }

    #[test]
    fn empty_corpus_and_empty_query() {
        let store = CorpusStore::in_memory();
        let query = fixture_query();
        let bundle = retrieve_context(&query, &store, &RetrievalOptions::default()).unwrap();
        assert!(bundle.is_empty());
        assert!(bundle.doc_scores.is_empty());

        let noise = preprocess_query("https://x.co/abc");
        assert!(matches!(
            retrieve_context(&noise, &fixture_store(), &RetrievalOptions::default()),
            Err(RetrievalError::EmptyQuery)
        ));
    }

    #[test]
    fn query_timestamp_activates_the_default_window() {
        let store = fixture_store();
        let query = fixture_query().with_timestamp("2020-03-03T10:00:00Z".parse().unwrap());
        let bundle = retrieve_context(&query, &store, &RetrievalOptions::default()).unwrap();
        let model = doc_id_by_title(&store, "JPMorgan models Energizer battery sales");
        assert_eq!(bundle.doc_scores.len(), 3);
        assert!(!bundle.doc_scores.contains_key(&model));
        assert_eq!(bundle.units.len(), 1);

        let distant = fixture_query().with_timestamp("2021-01-01T00:00:00Z".parse().unwrap());
        let bundle = retrieve_context(&distant, &store, &RetrievalOptions::default()).unwrap();
        assert!(bundle.is_empty());
    }

    #[test]
    fn phrase_matching_drops_docs_without_adjacent_pairs() {
        let mut store = CorpusStore::in_memory();
        store
            .ingest(KnowledgeDoc::new(
                "Energizer shakes off JPMorgan bear call worries",
                "",
                SourceKind::News,
                None,
                None,
            ))
            .unwrap();
        store
            .ingest(KnowledgeDoc::new(
                "Bear market call: JPMorgan, Energizer both lower, market shakes",
                "",
                SourceKind::News,
                None,
                None,
            ))
            .unwrap();
        let query = fixture_query();
        let mut options = RetrievalOptions::default();
        options.doc_threshold = 0.5;
        options.unit_threshold = 0.5;
        let plain = retrieve_context(&query, &store, &options).unwrap();
        assert_eq!(plain.doc_scores.len(), 2);
        options.phrase_matching = true;
        let phrased = retrieve_context(&query, &store, &options).unwrap();
        assert_eq!(phrased.doc_scores.len(), 1);
        assert_eq!(phrased.units.len(), 1);
        assert!(phrased.units[0].text.starts_with("Energizer shakes"));
    }

    #[test]
    fn augmentation_renders_context_then_query() {
        let vocab = Vocab::from_merges(Vec::new()).unwrap();
        let store = fixture_store();
        let query = fixture_query();
        let bundle = retrieve_context(&query, &store, &RetrievalOptions::default()).unwrap();
        let rendered = augment_query(&query, &bundle, 4096, &vocab).unwrap();
        assert_eq!(
            rendered,
            format!(
                "Context: {}\nNews: {}",
                bundle.concatenated, query.cleaned
            )
        );
    }

    #[test]
    fn empty_bundle_passes_the_query_through() {
        let vocab = Vocab::from_merges(Vec::new()).unwrap();
        let query = fixture_query();
        let rendered = augment_query(&query, &ContextBundle::default(), 4096, &vocab).unwrap();
        assert_eq!(rendered, query.cleaned);
    }

    #[test]
    fn truncation_drops_whole_trailing_units() {
        let vocab = Vocab::from_merges(Vec::new()).unwrap();
        let query = preprocess_query("zinc outlook");
        let unit = |text: &str, index: usize| ContextUnit {
            text: text.to_string(),
            parent_doc_id: "d".to_string(),
            unit_index: index,
            unit_score: 1.0,
        };
        let bundle = ContextBundle {
            units: vec![unit("Zinc supply tightens.", 0), unit("Smelters idle.", 1)],
            doc_scores: BTreeMap::new(),
            concatenated: "Zinc supply tightens. Smelters idle.".to_string(),
        };
        let full = format!("Context: {}\nNews: {}", bundle.concatenated, query.cleaned);
        let one_unit = format!("Context: Zinc supply tightens.\nNews: {}", query.cleaned);

        let rendered = augment_query(&query, &bundle, full.len(), &vocab).unwrap();
        assert_eq!(rendered, full);
        let rendered = augment_query(&query, &bundle, full.len() - 1, &vocab).unwrap();
        assert_eq!(rendered, one_unit);
        let rendered = augment_query(&query, &bundle, one_unit.len() - 1, &vocab).unwrap();
        assert_eq!(rendered, query.cleaned);
        assert!(matches!(
            augment_query(&query, &bundle, query.cleaned.len() - 1, &vocab),
            Err(RetrievalError::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn traces_round_trip_and_carry_the_fingerprint() {
        let store = fixture_store();
        let query = fixture_query();
        let bundle = retrieve_context(&query, &store, &RetrievalOptions::default()).unwrap();
        let trace = RetrievalTrace::new(&query, &bundle, Some("deadbeefdeadbeef"));
        let mut buffer = Vec::new();
        write_traces(std::slice::from_ref(&trace), &mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        assert_eq!(text.lines().count(), 1);
        let parsed: RetrievalTrace = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(parsed, trace);
        assert_eq!(parsed.config_fingerprint.as_deref(), Some("deadbeefdeadbeef"));
        assert_eq!(parsed.query_tokens.len(), 7);
        assert_eq!(parsed.bundle_text, bundle.concatenated);
    }
}
