//! Fetches star histories from an in-process mock of the API and stores
//! them as event files.
//!
//! ```text
//! cargo run --example fetch_mock
//! ```

use chrono::{TimeZone, Utc};
use stargaze::ingest::{load_fetch, persist_fetch, Credential, StarClient};
use stargaze::mock::{MockRepo, MockServer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let created = Utc.with_ymd_and_hms(2015, 3, 1, 0, 0, 0).unwrap();
    let server = MockServer::start(vec![
        MockRepo::synthetic("acme/rocket", created, 340, chrono::Duration::hours(9), Some("Rust")),
        MockRepo::synthetic("acme/tiny", created, 12, chrono::Duration::days(20), Some("Go")),
        MockRepo::synthetic("acme/huge", created, 40_200, chrono::Duration::minutes(2), Some("C")),
    ])?;
    let client = StarClient::new(server.url(), Credential::anonymous());

    for meta in client.search_top_repos(3)? {
        println!("{:<12} {:>6} stars", meta.full_name, meta.total_stars);
    }

    let dir = tempfile::tempdir()?;
    let names: Vec<String> = ["acme/rocket", "acme/tiny", "acme/huge", "acme/missing"]
        .map(String::from)
        .to_vec();
    for (name, result) in client.fetch_many(&names, 2) {
        match result {
            Ok(rec) => {
                let path = dir.path().join(format!("{}.events", rec.meta.full_name.file_stem()));
                persist_fetch(&rec, &path)?;
                assert_eq!(load_fetch(&path)?, rec);
                println!(
                    "{name}: {} events over {} pages, complete = {}",
                    rec.events.len(),
                    rec.pages_fetched,
                    rec.complete
                );
            }
            Err(e) => println!("{name}: {} ({e})", e.kind()),
        }
    }
    Ok(())
}
