//! Pluggable document sources and the fetch-and-cache path.
//!
//! An adapter turns a query into normalized documents. Fetched
//! documents are always ingested into the store, so a later run can
//! answer the same query without the source. Under the prefer-local
//! policy a repeated fetch is served from the store directly and the
//! adapter is never called.

use std::fs;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CorpusError, CorpusStore, KnowledgeDoc, SourceKind, TimeRange};

/// A queryable source of knowledge documents.
pub trait SourceAdapter {
    /// Stable name distinguishing this adapter instance in the fetch
    /// cache and in traces.
    fn name(&self) -> &str;

    /// Runs the query, returning documents with `source_kind` set.
    fn search(
        &self,
        query: &str,
        range: Option<&TimeRange>,
    ) -> Result<Vec<KnowledgeDoc>, CorpusError>;
}

/// Whether a fetch may be answered from the store alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachePolicy {
    /// Serve a previously fetched query from the store; only ask the
    /// adapter for queries never seen before.
    PreferLocal,
    /// Ask the adapter every time, still caching what comes back.
    AlwaysFetch,
}

fn fetch_key(adapter: &str, query: &str, range: Option<&TimeRange>) -> String {
    let window = match range {
        Some(r) => format!("{}..{}", r.start().to_rfc3339(), r.end().to_rfc3339()),
        None => "unbounded".to_string(),
    };
    format!("{adapter}\u{1f}{query}\u{1f}{window}")
}

/// Queries `adapter` and ingests everything it returns, or serves the
/// query from cache when the policy allows. Returned documents keep
/// the adapter's order.
pub fn fetch_external(
    store: &mut CorpusStore,
    adapter: &dyn SourceAdapter,
    query: &str,
    range: Option<&TimeRange>,
    policy: CachePolicy,
) -> Result<Vec<KnowledgeDoc>, CorpusError> {
    let key = fetch_key(adapter.name(), query, range);
    if policy == CachePolicy::PreferLocal {
        if let Some(cached) = store.cached_fetch(&key) {
            return Ok(cached.into_iter().cloned().collect());
        }
    }
    let fetched = adapter.search(query, range)?;
    let mut ids = Vec::with_capacity(fetched.len());
    let mut docs = Vec::with_capacity(fetched.len());
    for doc in fetched {
        let id = store.ingest(doc)?;
        docs.push(store.get(&id).expect("ingested document is present").clone());
        ids.push(id);
    }
    store.record_fetch(key, ids);
    Ok(docs)
}

/// Reads every regular file in one directory as a document: the file
/// stem becomes the title, the contents the body. The query is
/// ignored; filtering happens downstream against the index.
#[derive(Debug, Clone)]
pub struct LocalDirAdapter {
    dir: PathBuf,
    source_kind: SourceKind,
    name: String,
}

impl LocalDirAdapter {
    pub fn new(dir: impl Into<PathBuf>, source_kind: SourceKind) -> LocalDirAdapter {
        let dir = dir.into();
        let name = format!("local:{}", dir.display());
        LocalDirAdapter {
            dir,
            source_kind,
            name,
        }
    }
}

impl SourceAdapter for LocalDirAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn search(
        &self,
        _query: &str,
        _range: Option<&TimeRange>,
    ) -> Result<Vec<KnowledgeDoc>, CorpusError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|entry| entry.path())
            .filter(|path| path.is_file())
            .collect();
        paths.sort();
        let mut docs = Vec::with_capacity(paths.len());
        for path in paths {
            let title = path
                .file_stem()
                .map(|stem| stem.to_string_lossy().into_owned())
                .unwrap_or_default();
            let body = fs::read_to_string(&path)?;
            docs.push(KnowledgeDoc::new(
                title,
                body.trim_end().to_string(),
                self.source_kind,
                None,
                None,
            ));
        }
        Ok(docs)
    }
}

/// Field mapping and transport settings for a JSON search endpoint.
///
/// The adapter issues `GET endpoint?{query_param}={query}` and reads
/// documents out of the response by field name. All mapped fields are
/// looked up at the top level of each result object. An empty
/// `results_field` means the response body itself is the array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpAdapterConfig {
    pub endpoint: String,
    #[serde(default = "default_query_param")]
    pub query_param: String,
    /// Query parameter carrying the range start as RFC 3339, sent
    /// only when a range is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_param: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_param: Option<String>,
    /// Name of the environment variable holding the bearer token.
    /// The token itself never appears in configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    #[serde(default = "default_results_field")]
    pub results_field: String,
    #[serde(default = "default_title_field")]
    pub title_field: String,
    #[serde(default = "default_body_field")]
    pub body_field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url_field: Option<String>,
    /// Field holding an RFC 3339 publication time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_at_field: Option<String>,
    pub source_kind: SourceKind,
}

fn default_query_param() -> String {
    "q".to_string()
}

fn default_results_field() -> String {
    "results".to_string()
}

fn default_title_field() -> String {
    "title".to_string()
}

fn default_body_field() -> String {
    "body".to_string()
}

/// Search adapter for any HTTP endpoint describable by
/// [`HttpAdapterConfig`].
#[derive(Debug)]
pub struct HttpSearchAdapter {
    config: HttpAdapterConfig,
    client: reqwest::blocking::Client,
    name: String,
}

impl HttpSearchAdapter {
    pub fn new(config: HttpAdapterConfig) -> HttpSearchAdapter {
        let name = format!("http:{}", config.endpoint);
        HttpSearchAdapter {
            config,
            client: reqwest::blocking::Client::new(),
            name,
        }
    }

    fn doc_from_item(&self, item: &Value) -> Result<KnowledgeDoc, CorpusError> {
        let title = optional_string(item, &self.config.title_field)?.unwrap_or_default();
        let body = optional_string(item, &self.config.body_field)?.unwrap_or_default();
        if title.is_empty() && body.is_empty() {
            return Err(CorpusError::MalformedResponse {
                message: format!(
                    "result object has neither {:?} nor {:?}",
                    self.config.title_field, self.config.body_field
                ),
            });
        }
        let url = match &self.config.url_field {
            Some(field) => optional_string(item, field)?,
            None => None,
        };
        let published_at = match &self.config.published_at_field {
            Some(field) => match optional_string(item, field)? {
                Some(raw) => Some(parse_timestamp(&raw)?),
                None => None,
            },
            None => None,
        };
        Ok(KnowledgeDoc::new(
            title,
            body,
            self.config.source_kind,
            published_at,
            url,
        ))
    }
}

fn optional_string(item: &Value, field: &str) -> Result<Option<String>, CorpusError> {
    match item.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(CorpusError::MalformedResponse {
            message: format!("field {field:?} is not a string: {other}"),
        }),
    }
}

fn parse_timestamp(raw: &str) -> Result<DateTime<Utc>, CorpusError> {
    DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|err| CorpusError::MalformedResponse {
            message: format!("bad timestamp {raw:?}: {err}"),
        })
}

impl SourceAdapter for HttpSearchAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn search(
        &self,
        query: &str,
        range: Option<&TimeRange>,
    ) -> Result<Vec<KnowledgeDoc>, CorpusError> {
        let mut request = self
            .client
            .get(&self.config.endpoint)
            .query(&[(self.config.query_param.as_str(), query)]);
        if let Some(range) = range {
            if let Some(param) = &self.config.start_param {
                request = request.query(&[(param.as_str(), range.start().to_rfc3339())]);
            }
            if let Some(param) = &self.config.end_param {
                request = request.query(&[(param.as_str(), range.end().to_rfc3339())]);
            }
        }
        if let Some(env_name) = &self.config.credential_env {
            let token = std::env::var(env_name).map_err(|_| CorpusError::AuthFailure {
                message: format!("credential variable {env_name} is not set"),
            })?;
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|err| CorpusError::NetworkFailure {
            message: err.to_string(),
        })?;
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(CorpusError::AuthFailure {
                message: format!("server answered {status}"),
            });
        }
        if !status.is_success() {
            return Err(CorpusError::NetworkFailure {
                message: format!("server answered {status}"),
            });
        }
        let payload: Value = response.json().map_err(|err| CorpusError::MalformedResponse {
            message: err.to_string(),
        })?;
        let items = if self.config.results_field.is_empty() {
            payload.as_array()
        } else {
            payload.get(&self.config.results_field).and_then(Value::as_array)
        }
        .ok_or_else(|| CorpusError::MalformedResponse {
            message: format!("no result array at {:?}", self.config.results_field),
        })?;
        items.iter().map(|item| self.doc_from_item(item)).collect()
    }
}
