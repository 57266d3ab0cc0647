use std::collections::HashSet;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use rayon::prelude::*;
use serde::Deserialize;
use ureq::http::Response;
use ureq::Body;

use super::{
    FetchRecord, IngestError, RepoMeta, RepoName, Result, StarEvent, MAX_PAGES, PAGE_SIZE,
};

pub const DEFAULT_API_URL: &str = "https://api.github.com";
pub const TOKEN_ENV: &str = "STARGAZE_TOKEN";
pub const API_URL_ENV: &str = "STARGAZE_API_URL";

const STAR_MEDIA_TYPE: &str = "application/vnd.github.star+json";
const JSON_MEDIA_TYPE: &str = "application/vnd.github+json";
/// The search endpoint serves at most this many pages per query.
const SEARCH_MAX_PAGES: u32 = 10;

/// Bearer token, or anonymous access.
#[derive(Clone, Default)]
pub struct Credential(Option<String>);

impl Credential {
    pub fn token(token: impl Into<String>) -> Self {
        Credential(Some(token.into()))
    }

    pub fn anonymous() -> Self {
        Credential(None)
    }

    /// Reads `STARGAZE_TOKEN`; an unset or empty variable means anonymous.
    pub fn from_env() -> Self {
        match std::env::var(TOKEN_ENV) {
            Ok(t) if !t.trim().is_empty() => Credential(Some(t.trim().to_string())),
            _ => Credential(None),
        }
    }

    pub fn is_authenticated(&self) -> bool {
        self.0.is_some()
    }
}

impl std::fmt::Debug for Credential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Some(_) => f.write_str("Credential(<token>)"),
            None => f.write_str("Credential(anonymous)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Retries after the first failed attempt on transport errors and 5xx.
    pub max_retries: u32,
    /// Delay before retry `i` is `base_delay * 2^i`.
    pub base_delay: Duration,
    /// Upper bound on the single wait for a rate-limit reset. `None` waits
    /// for however long the server advertises.
    pub max_reset_wait: Option<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_secs(2),
            max_reset_wait: None,
        }
    }
}

/// Blocking API client. Cheap to clone and safe to share between threads.
#[derive(Clone)]
pub struct StarClient {
    agent: ureq::Agent,
    base_url: String,
    credential: Credential,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct ApiRepo {
    full_name: String,
    created_at: DateTime<Utc>,
    language: Option<String>,
    stargazers_count: u64,
}

impl ApiRepo {
    fn into_meta(self) -> Result<RepoMeta> {
        Ok(RepoMeta {
            full_name: RepoName::parse(&self.full_name)?,
            created_at: self.created_at,
            primary_language: self.language.filter(|l| !l.is_empty()),
            total_stars: self.stargazers_count,
        })
    }
}

#[derive(Deserialize)]
struct ApiUser {
    login: String,
}

#[derive(Deserialize)]
struct ApiStar {
    starred_at: DateTime<Utc>,
    user: Option<ApiUser>,
}

#[derive(Deserialize)]
struct ApiSearch {
    items: Vec<ApiRepo>,
}

impl StarClient {
    pub fn new(base_url: impl Into<String>, credential: Credential) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .user_agent("stargaze/0.1")
            .build();
        StarClient {
            agent: ureq::Agent::new_with_config(config),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            credential,
            retry: RetryPolicy::default(),
        }
    }

    /// Client configured from `STARGAZE_API_URL` and `STARGAZE_TOKEN`.
    pub fn from_env() -> Self {
        let url = std::env::var(API_URL_ENV)
            .ok()
            .filter(|u| !u.trim().is_empty())
            .unwrap_or_else(|| DEFAULT_API_URL.to_string());
        StarClient::new(url, Credential::from_env())
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn fetch_repo_meta(&self, name: &str) -> Result<RepoMeta> {
        let name = RepoName::parse(name)?;
        let url = format!("{}/repos/{}", self.base_url, name);
        let mut resp = self.get(&url, &[], JSON_MEDIA_TYPE, &name)?;
        let repo: ApiRepo = read_json(&mut resp)?;
        repo.into_meta()
    }

    /// Retrieves metadata and the full star listing, page by page.
    pub fn fetch_star_events(&self, name: &str) -> Result<FetchRecord> {
        let meta = self.fetch_repo_meta(name)?;
        let name = meta.full_name.clone();
        let url = format!("{}/repos/{}/stargazers", self.base_url, name);
        let per_page = PAGE_SIZE.to_string();

        let mut events = Vec::new();
        let mut pages = 0;
        let mut exhausted = false;
        while pages < MAX_PAGES {
            let page = (pages + 1).to_string();
            let mut resp = self.get(
                &url,
                &[("per_page", &per_page), ("page", &page)],
                STAR_MEDIA_TYPE,
                &name,
            )?;
            let stars: Vec<ApiStar> = read_json(&mut resp)?;
            pages += 1;
            let n = stars.len();
            events.extend(stars.into_iter().map(|s| StarEvent {
                repo: name.clone(),
                starred_at: s.starred_at,
                // deleted accounts come back as null users
                user: s.user.map(|u| u.login).unwrap_or_else(|| "ghost".into()),
            }));
            if n < PAGE_SIZE {
                exhausted = true;
                break;
            }
        }
        // a full final page at the cap is only known complete through the
        // star total the API reported
        let complete = exhausted || events.len() as u64 >= meta.total_stars;
        if !complete {
            log::warn!(
                "{name}: page cap reached with {} of {} stars",
                events.len(),
                meta.total_stars
            );
        }
        Ok(FetchRecord::from_raw(meta, events, complete, pages))
    }

    /// The `n` most-starred public repositories, most-starred first.
    ///
    /// The search endpoint stops after 1,000 results per query, so the
    /// listing continues with `stars:<=m` queries anchored at the lowest
    /// star count seen so far. Repositories tied at a boundary keep API order.
    pub fn search_top_repos(&self, n: usize) -> Result<Vec<RepoMeta>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let url = format!("{}/search/repositories", self.base_url);
        let per_page = PAGE_SIZE.to_string();
        let search_name = RepoName::parse("search/repositories")?;
        let mut out: Vec<RepoMeta> = Vec::with_capacity(n);
        let mut seen = HashSet::new();
        let mut upper: Option<u64> = None;

        'queries: loop {
            let q = match upper {
                None => "stars:>0".to_string(),
                Some(u) => format!("stars:<={u}"),
            };
            let mut added = 0;
            let mut lowest = None;
            for page in 1..=SEARCH_MAX_PAGES {
                let page = page.to_string();
                let mut resp = self.get(
                    &url,
                    &[
                        ("q", &q),
                        ("sort", "stars"),
                        ("order", "desc"),
                        ("per_page", &per_page),
                        ("page", &page),
                    ],
                    JSON_MEDIA_TYPE,
                    &search_name,
                )?;
                let result: ApiSearch = read_json(&mut resp)?;
                let len = result.items.len();
                for item in result.items {
                    let meta = item.into_meta()?;
                    lowest = Some(meta.total_stars);
                    if seen.insert(meta.full_name.clone()) {
                        out.push(meta);
                        added += 1;
                        if out.len() == n {
                            break 'queries;
                        }
                    }
                }
                if len < PAGE_SIZE {
                    break 'queries;
                }
            }
            if added == 0 {
                log::warn!(
                    "search cannot advance past {} stars; returning {} repositories",
                    upper.unwrap_or_default(),
                    out.len()
                );
                break;
            }
            upper = lowest;
        }
        Ok(out)
    }

    /// Fetches several repositories with at most `parallelism` in flight.
    /// Results come back in input order.
    pub fn fetch_many(
        &self,
        names: &[String],
        parallelism: usize,
    ) -> Vec<(String, Result<FetchRecord>)> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build();
        let run = || {
            names
                .par_iter()
                .map(|n| (n.clone(), self.fetch_star_events(n)))
                .collect::<Vec<_>>()
        };
        match pool {
            Ok(pool) => pool.install(run),
            Err(_) => names
                .iter()
                .map(|n| (n.clone(), self.fetch_star_events(n)))
                .collect(),
        }
    }

    fn get(
        &self,
        url: &str,
        query: &[(&str, &str)],
        accept: &str,
        subject: &RepoName,
    ) -> Result<Response<Body>> {
        let mut attempts = 0u32;
        let mut waited_for_reset = false;
        loop {
            attempts += 1;
            let mut req = self
                .agent
                .get(url)
                .header("Accept", accept)
                .header("X-GitHub-Api-Version", "2022-11-28");
            for (k, v) in query {
                req = req.query(*k, *v);
            }
            if let Some(token) = &self.credential.0 {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }

            let retryable = match req.call() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    match status {
                        200..=299 => return Ok(resp),
                        404 => return Err(IngestError::NotFound(subject.to_string())),
                        403 | 429 if is_rate_limited(&resp) => {
                            let reset_at = reset_time(&resp);
                            if waited_for_reset {
                                return Err(IngestError::RateLimited {
                                    reset_at,
                                    limit: header_u64(&resp, "x-ratelimit-limit"),
                                    authenticated: self.credential.is_authenticated(),
                                });
                            }
                            waited_for_reset = true;
                            let mut wait = (reset_at - Utc::now()).to_std().unwrap_or_default();
                            if let Some(cap) = self.retry.max_reset_wait {
                                wait = wait.min(cap);
                            }
                            log::warn!("rate limited; sleeping {:.1}s until reset", wait.as_secs_f64());
                            thread::sleep(wait);
                            // the reset wait does not consume a transport retry
                            attempts -= 1;
                            continue;
                        }
                        500..=599 => format!("HTTP {status}"),
                        _ => {
                            return Err(IngestError::Http {
                                status,
                                url: url.to_string(),
                            })
                        }
                    }
                }
                Err(e) => e.to_string(),
            };

            if attempts > self.retry.max_retries {
                return Err(IngestError::Transport {
                    attempts,
                    message: retryable,
                });
            }
            let delay = self.retry.base_delay * 2u32.pow(attempts - 1);
            log::warn!("{url}: {retryable}; retrying in {:.1}s", delay.as_secs_f64());
            thread::sleep(delay);
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(resp: &mut Response<Body>) -> Result<T> {
    resp.body_mut()
        .with_config()
        .limit(64 * 1024 * 1024)
        .read_json()
        .map_err(|e| IngestError::Decode(e.to_string()))
}

fn header_u64(resp: &Response<Body>, name: &str) -> Option<u64> {
    resp.headers()
        .get(name)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
}

fn is_rate_limited(resp: &Response<Body>) -> bool {
    resp.status().as_u16() == 429
        || header_u64(resp, "x-ratelimit-remaining") == Some(0)
        || resp.headers().contains_key("retry-after")
}

fn reset_time(resp: &Response<Body>) -> DateTime<Utc> {
    if let Some(epoch) = header_u64(resp, "x-ratelimit-reset") {
        if let Some(t) = Utc.timestamp_opt(epoch as i64, 0).single() {
            return t;
        }
    }
    let secs = header_u64(resp, "retry-after").unwrap_or(60);
    Utc::now() + chrono::Duration::seconds(secs as i64)
}
