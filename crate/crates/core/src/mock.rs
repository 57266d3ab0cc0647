//! An in-process imitation of the star-listing API, for tests and examples.
//!
//! Serves repository metadata, paginated star events (with the 400-page
//! cap), and the star-sorted search listing (with the 10-page cap). Faults
//! can be injected: a number of leading requests answered with a rate-limit
//! response, followed by a number answered with `502`.

use std::collections::HashMap;
use std::io;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::json;
use tiny_http::{Header, Response, Server};

use crate::ingest::{RepoMeta, RepoName, StarEvent, MAX_PAGES};

#[derive(Debug, Clone)]
pub struct MockRepo {
    pub meta: RepoMeta,
    /// Served in this order.
    pub events: Vec<StarEvent>,
}

impl MockRepo {
    /// A repository with `stars` events spaced `spacing` apart starting one
    /// hour after creation. `total_stars` matches the event count.
    pub fn synthetic(
        name: &str,
        created_at: DateTime<Utc>,
        stars: usize,
        spacing: chrono::Duration,
        language: Option<&str>,
    ) -> Self {
        let full_name = RepoName::parse(name).expect("mock repository name");
        let start = created_at + chrono::Duration::hours(1);
        let events = (0..stars)
            .map(|i| StarEvent {
                repo: full_name.clone(),
                starred_at: start + spacing * i as i32,
                user: format!("stargazer{i}"),
            })
            .collect();
        MockRepo {
            meta: RepoMeta {
                full_name,
                created_at,
                primary_language: language.map(str::to_string),
                total_stars: stars as u64,
            },
            events,
        }
    }

    /// Metadata only; the star listing is empty but `total_stars` is kept.
    /// Useful for search fixtures.
    pub fn listing_only(meta: RepoMeta) -> Self {
        MockRepo {
            meta,
            events: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockFaults {
    /// Leading requests answered `403` with `x-ratelimit-remaining: 0`.
    pub rate_limited_requests: usize,
    /// Advertised reset, relative to the moment of the limited response.
    pub reset_after: Duration,
    /// Requests after the rate-limited ones answered `502`.
    pub server_errors: usize,
}

struct State {
    repos: HashMap<String, MockRepo>,
    ranked: Vec<String>,
    faults: MockFaults,
    served: AtomicUsize,
    log: Mutex<Vec<RequestLog>>,
}

#[derive(Debug, Clone)]
pub struct RequestLog {
    pub path: String,
    pub query: HashMap<String, String>,
    pub authorized: bool,
    pub accept: Option<String>,
    pub status: u16,
}

pub struct MockServer {
    url: String,
    state: Arc<State>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

/// Accepted sockets inherit TCP_NODELAY from the listener; without it small
/// response writes on a kept-alive connection wait for a delayed ACK.
fn nodelay_listener() -> io::Result<std::net::TcpListener> {
    use socket2::{Domain, Socket, Type};
    let socket = Socket::new(Domain::IPV4, Type::STREAM, None)?;
    socket.set_tcp_nodelay(true)?;
    socket.bind(&std::net::SocketAddr::from(([127, 0, 0, 1], 0)).into())?;
    socket.listen(128)?;
    Ok(socket.into())
}

impl MockServer {
    pub fn start(repos: Vec<MockRepo>) -> io::Result<Self> {
        Self::start_with(repos, MockFaults::default())
    }

    pub fn start_with(repos: Vec<MockRepo>, faults: MockFaults) -> io::Result<Self> {
        let server = Server::from_listener(nodelay_listener()?, None).map_err(io::Error::other)?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| io::Error::other("mock server has no TCP address"))?;

        let mut ranked: Vec<&MockRepo> = repos.iter().collect();
        ranked.sort_by(|a, b| {
            b.meta
                .total_stars
                .cmp(&a.meta.total_stars)
                .then_with(|| a.meta.full_name.cmp(&b.meta.full_name))
        });
        let ranked = ranked
            .iter()
            .map(|r| r.meta.full_name.to_string())
            .collect();
        let state = Arc::new(State {
            repos: repos
                .into_iter()
                .map(|r| (r.meta.full_name.to_string(), r))
                .collect(),
            ranked,
            faults,
            served: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        });
        let stop = Arc::new(AtomicBool::new(false));

        let handle = {
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(req)) => handle(&state, req),
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
            })
        };

        Ok(MockServer {
            url: format!("http://127.0.0.1:{port}"),
            state,
            stop,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn requests(&self) -> Vec<RequestLog> {
        self.state.log.lock().map(|l| l.clone()).unwrap_or_default()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle(state: &State, req: tiny_http::Request) {
    let (path, query) = split_url(req.url());
    let header = |name: &'static str| {
        req.headers()
            .iter()
            .find(|h| h.field.equiv(name))
            .map(|h| h.value.as_str().to_string())
    };
    let authorized = header("Authorization").is_some();
    let accept = header("Accept");

    let n = state.served.fetch_add(1, Ordering::SeqCst);
    let faults = &state.faults;
    let limit = if authorized { 5000 } else { 60 };
    let (status, body, extra): (u16, String, Vec<(&str, String)>) =
        if n < faults.rate_limited_requests {
            let reset = Utc::now() + chrono::Duration::from_std(faults.reset_after).unwrap_or_default();
            // round up so the advertised reset never precedes the real one
            let epoch = reset.timestamp() + i64::from(reset.timestamp_subsec_nanos() > 0);
            (
                403,
                json!({"message": "API rate limit exceeded"}).to_string(),
                vec![
                    ("x-ratelimit-remaining", "0".into()),
                    ("x-ratelimit-limit", limit.to_string()),
                    ("x-ratelimit-reset", epoch.to_string()),
                ],
            )
        } else if n < faults.rate_limited_requests + faults.server_errors {
            (502, json!({"message": "Bad Gateway"}).to_string(), vec![])
        } else {
            let (s, b) = route(state, &path, &query, accept.as_deref());
            (s, b, vec![("x-ratelimit-limit", limit.to_string())])
        };

    if let Ok(mut log) = state.log.lock() {
        log.push(RequestLog {
            path,
            query,
            authorized,
            accept,
            status,
        });
    }

    let mut resp = Response::from_string(body).with_status_code(status);
    resp.add_header(Header::from_bytes("Content-Type", "application/json").expect("header"));
    for (k, v) in extra {
        resp.add_header(Header::from_bytes(k, v.as_bytes()).expect("header"));
    }
    let _ = req.respond(resp);
}

fn route(
    state: &State,
    path: &str,
    query: &HashMap<String, String>,
    accept: Option<&str>,
) -> (u16, String) {
    let not_found = || (404, json!({"message": "Not Found"}).to_string());
    let page = |default_size| {
        let p: usize = query.get("page").and_then(|v| v.parse().ok()).unwrap_or(1);
        let per: usize = query
            .get("per_page")
            .and_then(|v| v.parse().ok())
            .unwrap_or(default_size);
        (p.max(1), per.clamp(1, 100))
    };

    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    match segments.as_slice() {
        ["repos", owner, name] => match state.repos.get(&format!("{owner}/{name}")) {
            Some(r) => (200, repo_json(&r.meta).to_string()),
            None => not_found(),
        },
        ["repos", owner, name, "stargazers"] => {
            let Some(r) = state.repos.get(&format!("{owner}/{name}")) else {
                return not_found();
            };
            let (p, per) = page(30);
            if p > MAX_PAGES as usize {
                return (
                    422,
                    json!({"message": "In order to keep the API fast for everyone, pagination is limited for this resource."})
                        .to_string(),
                );
            }
            let with_time = accept.is_some_and(|a| a.contains("star+json"));
            let items: Vec<_> = r
                .events
                .iter()
                .skip((p - 1) * per)
                .take(per)
                .map(|e| {
                    if with_time {
                        json!({
                            "starred_at": e.starred_at.to_rfc3339_opts(SecondsFormat::Secs, true),
                            "user": {"login": e.user},
                        })
                    } else {
                        json!({"login": e.user})
                    }
                })
                .collect();
            (200, serde_json::Value::Array(items).to_string())
        }
        ["search", "repositories"] => {
            let (p, per) = page(30);
            if p > 10 {
                return (
                    422,
                    json!({"message": "Only the first 1000 search results are available"})
                        .to_string(),
                );
            }
            let q = query.get("q").map(String::as_str).unwrap_or("");
            let bound = parse_star_bound(q);
            let matching: Vec<&MockRepo> = state
                .ranked
                .iter()
                .filter_map(|n| state.repos.get(n))
                .filter(|r| bound.admits(r.meta.total_stars))
                .collect();
            let items: Vec<_> = matching
                .iter()
                .skip((p - 1) * per)
                .take(per)
                .map(|r| repo_json(&r.meta))
                .collect();
            (
                200,
                json!({"total_count": matching.len(), "items": items}).to_string(),
            )
        }
        _ => not_found(),
    }
}

enum StarBound {
    Any,
    Above(u64),
    AtMost(u64),
}

impl StarBound {
    fn admits(&self, stars: u64) -> bool {
        match *self {
            StarBound::Any => true,
            StarBound::Above(b) => stars > b,
            StarBound::AtMost(b) => stars <= b,
        }
    }
}

fn parse_star_bound(q: &str) -> StarBound {
    let Some(rest) = q.split_whitespace().find_map(|t| t.strip_prefix("stars:")) else {
        return StarBound::Any;
    };
    if let Some(v) = rest.strip_prefix("<=") {
        v.parse().map(StarBound::AtMost).unwrap_or(StarBound::Any)
    } else if let Some(v) = rest.strip_prefix('>') {
        v.parse().map(StarBound::Above).unwrap_or(StarBound::Any)
    } else {
        StarBound::Any
    }
}

fn repo_json(meta: &RepoMeta) -> serde_json::Value {
    json!({
        "full_name": meta.full_name.as_str(),
        "created_at": meta.created_at.to_rfc3339_opts(SecondsFormat::Secs, true),
        "language": meta.primary_language,
        "stargazers_count": meta.total_stars,
    })
}

fn split_url(url: &str) -> (String, HashMap<String, String>) {
    let (path, qs) = url.split_once('?').unwrap_or((url, ""));
    let query = qs
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            (percent_decode(k), percent_decode(v))
        })
        .collect();
    (path.to_string(), query)
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'+' => out.push(b' '),
            b'%' if i + 2 < bytes.len() => {
                match u8::from_str_radix(&s[i + 1..i + 3], 16) {
                    Ok(b) => {
                        out.push(b);
                        i += 2;
                    }
                    Err(_) => out.push(b'%'),
                }
            }
            b => out.push(b),
        }
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}
