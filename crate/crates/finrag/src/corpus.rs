//! Document store, inverted token index, and candidate generation.
//!
//! Documents live in an append-only JSONL log; the inverted index is
//! derived data, rebuilt from the log on open and updated in place on
//! ingest. Document ids are content hashes, so replaying a log or
//! re-ingesting a feed is idempotent.
//!
//! The borrow rules give the intended concurrency shape for free:
//! any number of readers hold `&CorpusStore`, ingestion requires the
//! single `&mut`, and a rebuilt index replaces the old one in one
//! assignment so no reader can observe a half-built index.

pub mod adapter;

pub use adapter::{
    fetch_external, CachePolicy, HttpAdapterConfig, HttpSearchAdapter, LocalDirAdapter,
    SourceAdapter,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text::{token_set, tokenize};

/// Errors from the store, the index, and the source adapters.
#[derive(Debug, Error)]
pub enum CorpusError {
    /// Both title and body were empty.
    #[error("document has neither title nor body")]
    EmptyDocument,
    /// A candidate query had no tokens.
    #[error("candidate query has no tokens")]
    EmptyQuery,
    /// A time range had a start at or after its end.
    #[error("time range start {start} is not before end {end}")]
    InvalidTimeRange {
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
    /// A document log line failed to parse.
    #[error("corpus log line {line}: {message}")]
    MalformedLog { line: usize, message: String },
    /// The backing log could not be read or written.
    #[error("storage failure: {0}")]
    StorageFailure(#[from] std::io::Error),
    /// An external source could not be reached; safe to retry.
    #[error("network failure: {message}")]
    NetworkFailure { message: String },
    /// The external source rejected our credentials; retrying cannot
    /// help.
    #[error("authentication failure: {message}")]
    AuthFailure { message: String },
    /// The external source answered with a payload that does not match
    /// the configured field mapping.
    #[error("malformed response: {message}")]
    MalformedResponse { message: String },
}

/// The four categories of knowledge source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    News,
    CentralizedResearch,
    CrowdResearch,
    Social,
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SourceKind::News => "news",
            SourceKind::CentralizedResearch => "centralized_research",
            SourceKind::CrowdResearch => "crowd_research",
            SourceKind::Social => "social",
        };
        f.write_str(name)
    }
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "news" => Ok(SourceKind::News),
            "centralized_research" => Ok(SourceKind::CentralizedResearch),
            "crowd_research" => Ok(SourceKind::CrowdResearch),
            "social" => Ok(SourceKind::Social),
            other => Err(format!(
                "unknown source kind {other:?}, expected news, centralized_research, crowd_research, or social"
            )),
        }
    }
}

/// Hash identifying a document by its content.
///
/// Only title, body, and url participate: a feed that re-serves the
/// same article with a refreshed timestamp or a different source tag
/// still maps to the same id.
pub fn compute_doc_id(title: &str, body: &str, url: Option<&str>) -> String {
    let mut hasher = Sha256::new();
    for part in [title, body] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    match url {
        Some(url) => {
            hasher.update([1u8]);
            hasher.update((url.len() as u64).to_le_bytes());
            hasher.update(url.as_bytes());
        }
        None => hasher.update([0u8]),
    }
    let digest = hasher.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// One stored knowledge document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    #[serde(skip)]
    pub id: String,
    pub title: String,
    pub body: String,
    pub source_kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl KnowledgeDoc {
    /// Builds a document and stamps its content id.
    pub fn new(
        title: impl Into<String>,
        body: impl Into<String>,
        source_kind: SourceKind,
        published_at: Option<DateTime<Utc>>,
        url: Option<String>,
    ) -> KnowledgeDoc {
        let title = title.into();
        let body = body.into();
        let id = compute_doc_id(&title, &body, url.as_deref());
        KnowledgeDoc {
            id,
            title,
            body,
            source_kind,
            published_at,
            url,
        }
    }

    /// The distinct content tokens of title and body together.
    pub fn token_set(&self) -> BTreeSet<String> {
        let mut tokens = token_set(&self.title);
        tokens.extend(token_set(&self.body));
        tokens
    }
}

/// A closed interval of publication times, start strictly before end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeRange {
    start: DateTime<Utc>,
    end: DateTime<Utc>,
}

impl TimeRange {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<TimeRange, CorpusError> {
        if start >= end {
            return Err(CorpusError::InvalidTimeRange { start, end });
        }
        Ok(TimeRange { start, end })
    }

    /// The search window used when a query carries a timestamp but no
    /// explicit range: three days before it through one day after,
    /// covering run-up coverage and same-cycle follow-ups.
    pub fn default_window(timestamp: DateTime<Utc>) -> TimeRange {
        TimeRange {
            start: timestamp - Duration::days(3),
            end: timestamp + Duration::days(1),
        }
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.end
    }

    /// True when `t` falls inside the range, endpoints included.
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Token index over the store, kept consistent in both directions.
#[derive(Debug, Clone, Default)]
pub struct InvertedIndex {
    postings: BTreeMap<String, BTreeSet<String>>,
    doc_tokens: BTreeMap<String, BTreeSet<String>>,
}

impl InvertedIndex {
    fn insert_doc(&mut self, id: &str, tokens: BTreeSet<String>) {
        for token in &tokens {
            self.postings
                .entry(token.clone())
                .or_default()
                .insert(id.to_string());
        }
        self.doc_tokens.insert(id.to_string(), tokens);
    }

    /// Ids of documents containing `token`.
    pub fn docs_for(&self, token: &str) -> Option<&BTreeSet<String>> {
        self.postings.get(token)
    }

    /// The indexed token set of one document.
    pub fn tokens_for(&self, doc_id: &str) -> Option<&BTreeSet<String>> {
        self.doc_tokens.get(doc_id)
    }

    /// Verifies the two directions describe the same relation.
    pub fn is_consistent(&self) -> bool {
        let forward_pairs = self
            .doc_tokens
            .iter()
            .flat_map(|(id, tokens)| tokens.iter().map(move |t| (t.clone(), id.clone())))
            .collect::<BTreeSet<_>>();
        let backward_pairs = self
            .postings
            .iter()
            .flat_map(|(token, ids)| ids.iter().map(move |id| (token.clone(), id.clone())))
            .collect::<BTreeSet<_>>();
        forward_pairs == backward_pairs
    }
}

/// Counts from one bulk ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestSummary {
    /// Documents parsed from the stream.
    pub read: usize,
    /// Documents that were new to the store.
    pub added: usize,
}

/// Document store with an optional JSONL log behind it.
#[derive(Debug)]
pub struct CorpusStore {
    docs: BTreeMap<String, KnowledgeDoc>,
    index: InvertedIndex,
    log: Option<File>,
    path: Option<PathBuf>,
    fetch_cache: BTreeMap<String, Vec<String>>,
}

impl CorpusStore {
    /// A store with no persistence, for tests and ad-hoc pipelines.
    pub fn in_memory() -> CorpusStore {
        CorpusStore {
            docs: BTreeMap::new(),
            index: InvertedIndex::default(),
            log: None,
            path: None,
            fetch_cache: BTreeMap::new(),
        }
    }

    /// Opens (or creates) a store backed by the JSONL log at `path`.
    ///
    /// Replaying the log recomputes every id, so duplicate lines
    /// collapse to one document.
    pub fn open(path: impl AsRef<Path>) -> Result<CorpusStore, CorpusError> {
        let path = path.as_ref();
        let mut store = CorpusStore::in_memory();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (ordinal, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let mut doc: KnowledgeDoc =
                    serde_json::from_str(&line).map_err(|err| CorpusError::MalformedLog {
                        line: ordinal + 1,
                        message: err.to_string(),
                    })?;
                doc.id = compute_doc_id(&doc.title, &doc.body, doc.url.as_deref());
                store.insert_unlogged(doc)?;
            }
        }
        store.log = Some(OpenOptions::new().create(true).append(true).open(path)?);
        store.path = Some(path.to_path_buf());
        Ok(store)
    }

    /// Where the log lives, when the store is file-backed.
    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeDoc> {
        self.docs.get(id)
    }

    /// All documents in id order.
    pub fn docs(&self) -> impl Iterator<Item = &KnowledgeDoc> {
        self.docs.values()
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    fn insert_unlogged(&mut self, doc: KnowledgeDoc) -> Result<String, CorpusError> {
        if doc.title.trim().is_empty() && doc.body.trim().is_empty() {
            return Err(CorpusError::EmptyDocument);
        }
        let id = doc.id.clone();
        if self.docs.contains_key(&id) {
            return Ok(id);
        }
        self.index.insert_doc(&id, doc.token_set());
        self.docs.insert(id.clone(), doc);
        Ok(id)
    }

    /// Stores `doc`, returning its id. Content already present is a
    /// no-op; nothing is appended to the log twice.
    pub fn ingest(&mut self, doc: KnowledgeDoc) -> Result<String, CorpusError> {
        if doc.title.trim().is_empty() && doc.body.trim().is_empty() {
            return Err(CorpusError::EmptyDocument);
        }
        if self.docs.contains_key(&doc.id) {
            return Ok(doc.id);
        }
        if let Some(log) = self.log.as_mut() {
            let line = serde_json::to_string(&doc).expect("document serializes");
            log.write_all(line.as_bytes())?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        self.insert_unlogged(doc)
    }

    /// Ingests a corpus JSONL stream, one document object per line.
    /// Blank lines are skipped; `added` counts documents not already
    /// in the store.
    pub fn ingest_jsonl<R: BufRead>(&mut self, reader: R) -> Result<IngestSummary, CorpusError> {
        let mut summary = IngestSummary { read: 0, added: 0 };
        for (ordinal, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut doc: KnowledgeDoc =
                serde_json::from_str(&line).map_err(|err| CorpusError::MalformedLog {
                    line: ordinal + 1,
                    message: err.to_string(),
                })?;
            doc.id = compute_doc_id(&doc.title, &doc.body, doc.url.as_deref());
            summary.read += 1;
            let before = self.docs.len();
            self.ingest(doc)?;
            summary.added += self.docs.len() - before;
        }
        Ok(summary)
    }

    /// Rebuilds the index from the documents and swaps it in whole.
    pub fn rebuild_index(&mut self) {
        let mut fresh = InvertedIndex::default();
        for (id, doc) in &self.docs {
            fresh.insert_doc(id, doc.token_set());
        }
        self.index = fresh;
    }

    /// Every document sharing at least one token with the query,
    /// ordered by shared-token count, then id.
    ///
    /// With a time range, documents outside it are dropped, as are
    /// documents with no publication time at all: an undated document
    /// cannot be shown to belong to the window.
    pub fn query_candidates(
        &self,
        query_tokens: &BTreeSet<String>,
        range: Option<&TimeRange>,
    ) -> Result<Vec<&KnowledgeDoc>, CorpusError> {
        if query_tokens.is_empty() {
            return Err(CorpusError::EmptyQuery);
        }
        let mut shared: BTreeMap<&str, usize> = BTreeMap::new();
        for token in query_tokens {
            if let Some(ids) = self.index.docs_for(token) {
                for id in ids {
                    *shared.entry(id).or_insert(0) += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = shared
            .into_iter()
            .filter(|(id, _)| match range {
                None => true,
                Some(range) => self.docs[*id]
                    .published_at
                    .is_some_and(|t| range.contains(t)),
            })
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Ok(ranked.into_iter().map(|(id, _)| &self.docs[id]).collect())
    }

    /// Drops candidates that do not contain at least one adjacent
    /// token pair of the query. `query_sequence` is the query's
    /// content tokens in their original order.
    pub fn filter_phrase_candidates<'a>(
        &self,
        candidates: Vec<&'a KnowledgeDoc>,
        query_sequence: &[String],
    ) -> Vec<&'a KnowledgeDoc> {
        let query_bigrams: BTreeSet<(&str, &str)> = query_sequence
            .windows(2)
            .map(|w| (w[0].as_str(), w[1].as_str()))
            .collect();
        if query_bigrams.is_empty() {
            return candidates;
        }
        candidates
            .into_iter()
            .filter(|doc| {
                let mut doc_seq = tokenize(&doc.title);
                doc_seq.extend(tokenize(&doc.body));
                doc_seq
                    .windows(2)
                    .any(|w| query_bigrams.contains(&(w[0].as_str(), w[1].as_str())))
            })
            .collect()
    }

    pub(crate) fn cached_fetch(&self, key: &str) -> Option<Vec<&KnowledgeDoc>> {
        let ids = self.fetch_cache.get(key)?;
        Some(ids.iter().filter_map(|id| self.docs.get(id)).collect())
    }

    pub(crate) fn record_fetch(&mut self, key: String, ids: Vec<String>) {
        self.fetch_cache.insert(key, ids);
    }
}
