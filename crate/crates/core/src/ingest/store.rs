//! Raw event files: one JSON header line, then one tab-separated
//! `repo  timestamp  user` line per star event.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{FetchRecord, IngestError, RepoMeta, RepoName, Result, StarEvent};

pub const EVENTS_FORMAT: &str = "stargaze-events";
pub const EVENTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    meta: Option<RepoMeta>,
    complete: Option<bool>,
    pages_fetched: Option<u32>,
    #[serde(default)]
    clamped: usize,
    events: Option<usize>,
}

pub fn write_fetch<W: Write>(record: &FetchRecord, mut w: W) -> Result<()> {
    let header = Header {
        format: EVENTS_FORMAT.to_string(),
        version: EVENTS_VERSION,
        meta: Some(record.meta.clone()),
        complete: Some(record.complete),
        pages_fetched: Some(record.pages_fetched),
        clamped: record.clamped,
        events: Some(record.events.len()),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| IngestError::Io(e.into()))?;
    w.write_all(b"\n")?;
    for e in &record.events {
        writeln!(
            w,
            "{}\t{}\t{}",
            e.repo,
            e.starred_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            e.user
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fetch<R: BufRead>(r: R) -> Result<FetchRecord> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(IngestError::Format {
        line: 1,
        message: "empty file".into(),
    })??;
    let header: Header = serde_json::from_str(&first).map_err(|e| IngestError::Format {
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != EVENTS_FORMAT || header.version != EVENTS_VERSION {
        return Err(IngestError::FormatVersionMismatch {
            found_format: header.format,
            found_version: header.version,
            expected_format: EVENTS_FORMAT,
            expected_version: EVENTS_VERSION,
        });
    }
    let missing = |field: &str| IngestError::Format {
        line: 1,
        message: format!("header is missing {field}"),
    };
    let meta = header.meta.ok_or_else(|| missing("meta"))?;
    let complete = header.complete.ok_or_else(|| missing("complete"))?;
    let pages_fetched = header.pages_fetched.ok_or_else(|| missing("pages_fetched"))?;

    let mut events = Vec::with_capacity(header.events.unwrap_or(0));
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| IngestError::Format {
            line: lineno,
            message,
        };
        let mut fields = line.splitn(3, '\t');
        let (Some(repo), Some(ts), Some(user)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(bad("expected 3 tab-separated fields".into()));
        };
        let repo = RepoName::parse(repo).map_err(|e| bad(e.to_string()))?;
        let starred_at = DateTime::parse_from_rfc3339(ts)
            .map_err(|e| bad(format!("timestamp {ts:?}: {e}")))?
            .with_timezone(&Utc);
        events.push(StarEvent {
            repo,
            starred_at,
            user: user.to_string(),
        });
    }
    if let Some(n) = header.events {
        if n != events.len() {
            return Err(IngestError::Format {
                line: 1,
                message: format!("header declares {n} events, file has {}", events.len()),
            });
        }
    }
    Ok(FetchRecord {
        meta,
        events,
        complete,
        pages_fetched,
        clamped: header.clamped,
    })
}

pub fn persist_fetch(record: &FetchRecord, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_fetch(record, BufWriter::new(f))
}

pub fn load_fetch(path: impl AsRef<Path>) -> Result<FetchRecord> {
    let f = File::open(path)?;
    read_fetch(BufReader::new(f))
}
