//! Report files stamped with the configuration that produced them.
//!
//! CSV reports open with two `#` comment lines: the config hash and the
//! config itself as JSON. JSON reports carry the same two fields next to
//! their rows.

use std::io::{self, BufRead, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

const HASH_PREFIX: &str = "# config_hash: ";
const CONFIG_PREFIX: &str = "# config: ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub config: Value,
}

impl Provenance {
    /// Hashes the canonical JSON form of `config` (object keys sorted).
    pub fn new(config: &impl Serialize) -> serde_json::Result<Self> {
        let config = serde_json::to_value(config)?;
        let bytes = serde_json::to_vec(&config)?;
        Ok(Provenance {
            config_hash: short_digest(&bytes),
            config,
        })
    }

    pub fn write_header<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{HASH_PREFIX}{}", self.config_hash)?;
        writeln!(w, "{CONFIG_PREFIX}{}", self.config)
    }

    /// Adds `config_hash` and `config` to a JSON object.
    pub fn stamp(&self, doc: &mut Value) {
        if let Value::Object(map) = doc {
            map.insert("config_hash".into(), Value::String(self.config_hash.clone()));
            map.insert("config".into(), self.config.clone());
        }
    }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// A `u64` derived from a master seed and a stream name, so independent
/// random streams stay fixed when others are added.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let d = Sha256::digest(format!("{seed}:{name}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn write_csv<W: Write, R: Serialize>(mut w: W, prov: &Provenance, rows: &[R]) -> csv::Result<()> {
    prov.write_header(&mut w)?;
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// `{"report": kind, "config_hash": .., "config": .., "rows": [..]}`.
pub fn write_json<W: Write, R: Serialize>(mut w: W, prov: &Provenance, kind: &str, rows: &[R]) -> serde_json::Result<()> {
    let mut doc = serde_json::json!({ "report": kind, "rows": rows });
    prov.stamp(&mut doc);
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n").map_err(serde_json::Error::io)
}

/// Rows of a CSV report, skipping the comment header.
pub fn read_csv<R: Read, T: DeserializeOwned>(r: R) -> csv::Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(r)
        .deserialize()
        .collect()
}

/// The config hash recorded in a CSV report header, if any.
pub fn read_csv_hash<R: BufRead>(r: R) -> io::Result<Option<String>> {
    for line in r.lines() {
        let line = line?;
        if let Some(h) = line.strip_prefix(HASH_PREFIX) {
            return Ok(Some(h.trim().to_string()));
        }
        if !line.starts_with('#') {
            break;
        }
    }
    Ok(None)
}
