//! Repository metadata and star-event ingestion.
//!
//! The client talks to a GitHub-compatible REST API. Star histories are
//! listed 100 events per page and the API refuses pages past 400, so any
//! repository with more than 40,000 stars comes back truncated; such
//! records carry `complete == false` rather than an error.

mod client;
mod store;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{Credential, RetryPolicy, StarClient, API_URL_ENV, DEFAULT_API_URL, TOKEN_ENV};
pub use store::{load_fetch, persist_fetch, read_fetch, write_fetch, EVENTS_FORMAT, EVENTS_VERSION};

/// Events per page requested from the stargazer listing.
pub const PAGE_SIZE: usize = 100;
/// Highest page number the API will serve for a star listing.
pub const MAX_PAGES: u32 = 400;

#[derive(Error, Debug)]
pub enum IngestError {
    #[error("invalid repository name {0:?}: expected \"owner/name\"")]
    InvalidName(String),

    #[error("repository not found: {0}")]
    NotFound(String),

    #[error("rate limited ({}); resets at {reset_at}", limit_note(*.limit, *.authenticated))]
    RateLimited {
        reset_at: DateTime<Utc>,
        limit: Option<u64>,
        authenticated: bool,
    },

    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    #[error("unexpected HTTP status {status} for {url}")]
    Http { status: u16, url: String },

    #[error("malformed API response: {0}")]
    Decode(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("unsupported event file: format {found_format:?} version {found_version}, expected {expected_format:?} version {expected_version}")]
    FormatVersionMismatch {
        found_format: String,
        found_version: u32,
        expected_format: &'static str,
        expected_version: u32,
    },

    #[error("malformed event file at line {line}: {message}")]
    Format { line: usize, message: String },
}

fn limit_note(limit: Option<u64>, authenticated: bool) -> String {
    let mode = if authenticated {
        "authenticated"
    } else {
        "unauthenticated; set STARGAZE_TOKEN for a higher limit"
    };
    match limit {
        Some(l) => format!("limit {l} requests/hour, {mode}"),
        None => mode.to_string(),
    }
}

impl IngestError {
    /// Short machine-readable tag used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            IngestError::InvalidName(_) => "InvalidName",
            IngestError::NotFound(_) => "NotFound",
            IngestError::RateLimited { .. } => "RateLimited",
            IngestError::Transport { .. } => "Transport",
            IngestError::Http { .. } => "Http",
            IngestError::Decode(_) => "Decode",
            IngestError::Io(_) => "Io",
            IngestError::FormatVersionMismatch { .. } => "FormatVersionMismatch",
            IngestError::Format { .. } => "Format",
        }
    }
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// A validated `owner/name` repository identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RepoName(String);

impl RepoName {
    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split('/');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(owner), Some(name), None)
                if !owner.is_empty()
                    && !name.is_empty()
                    && !s.chars().any(|c| c.is_whitespace() || c.is_control()) =>
            {
                Ok(RepoName(s.to_string()))
            }
            _ => Err(IngestError::InvalidName(s.to_string())),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn owner(&self) -> &str {
        self.0.split_once('/').map(|(o, _)| o).unwrap_or_default()
    }

    pub fn name(&self) -> &str {
        self.0.split_once('/').map(|(_, n)| n).unwrap_or_default()
    }

    /// File-system friendly stem, `owner__name`.
    pub fn file_stem(&self) -> String {
        format!("{}__{}", self.owner(), self.name())
    }
}

impl fmt::Display for RepoName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for RepoName {
    type Err = IngestError;
    fn from_str(s: &str) -> Result<Self> {
        RepoName::parse(s)
    }
}

impl TryFrom<String> for RepoName {
    type Error = IngestError;
    fn try_from(s: String) -> Result<Self> {
        RepoName::parse(&s)
    }
}

impl From<RepoName> for String {
    fn from(r: RepoName) -> String {
        r.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoMeta {
    pub full_name: RepoName,
    pub created_at: DateTime<Utc>,
    pub primary_language: Option<String>,
    pub total_stars: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarEvent {
    pub repo: RepoName,
    pub starred_at: DateTime<Utc>,
    pub user: String,
}

/// A repository's full star history as retrieved from the API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchRecord {
    pub meta: RepoMeta,
    /// Sorted ascending by `starred_at`.
    pub events: Vec<StarEvent>,
    /// False when the page cap was reached before the listing was exhausted.
    pub complete: bool,
    pub pages_fetched: u32,
    /// Events whose timestamp preceded `meta.created_at` and were moved onto it.
    #[serde(default)]
    pub clamped: usize,
}

impl FetchRecord {
    /// Builds a record from raw events: clamps pre-creation timestamps onto
    /// the creation instant and sorts the history.
    pub fn from_raw(
        meta: RepoMeta,
        mut events: Vec<StarEvent>,
        complete: bool,
        pages_fetched: u32,
    ) -> Self {
        let mut clamped = 0;
        for e in &mut events {
            if e.starred_at < meta.created_at {
                e.starred_at = meta.created_at;
                clamped += 1;
            }
        }
        if clamped > 0 {
            log::warn!(
                "{}: {clamped} star events predate the repository creation time; clamped",
                meta.full_name
            );
        }
        // stable, so equal timestamps keep API order
        events.sort_by_key(|e| e.starred_at);
        FetchRecord {
            meta,
            events,
            complete,
            pages_fetched,
            clamped,
        }
    }
}
