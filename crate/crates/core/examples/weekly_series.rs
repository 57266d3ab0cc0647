//! Bins star events into weekly cumulative counts, filters candidates and
//! cuts the analysis window.

use chrono::{Duration, TimeZone, Utc};
use stargaze::ingest::{FetchRecord, RepoMeta, RepoName, StarEvent};
use stargaze::timeseries::{build_weekly_series, filter_dataset, write_dataset, Candidate};

fn record(name: &str, weeks_old: i64, per_week: usize, language: Option<&str>) -> FetchRecord {
    let cutoff = Utc.with_ymd_and_hms(2016, 4, 25, 0, 0, 0).unwrap();
    let repo = RepoName::parse(name).unwrap();
    let created_at = cutoff - Duration::weeks(weeks_old);
    let events: Vec<StarEvent> = (0..weeks_old as usize * per_week)
        .map(|i| StarEvent {
            repo: repo.clone(),
            starred_at: created_at + Duration::hours(1) + Duration::minutes((i * 10_080 / per_week) as i64),
            user: format!("u{i}"),
        })
        .collect();
    let meta = RepoMeta {
        full_name: repo,
        created_at,
        primary_language: language.map(String::from),
        total_stars: events.len() as u64,
    };
    FetchRecord::from_raw(meta, events, true, 1)
}

fn main() {
    let cutoff = Utc.with_ymd_and_hms(2016, 4, 25, 0, 0, 0).unwrap();
    let records = [
        record("acme/steady", 80, 3, Some("Rust")),
        record("acme/young", 20, 9, Some("Go")),
        record("acme/plain", 70, 1, None),
    ];
    let candidates: Vec<Candidate> = records
        .iter()
        .map(|r| {
            let series = build_weekly_series(r, cutoff).unwrap();
            println!("{}: {} weeks, {} stars", series.repo, series.weeks(), series.total());
            Candidate {
                meta: r.meta.clone(),
                series,
                complete: r.complete,
            }
        })
        .collect();

    let (dataset, report) = filter_dataset(candidates, cutoff, 52);
    for e in &report.excluded {
        let rules: Vec<String> = e.rules.iter().map(ToString::to_string).collect();
        println!("excluded {}: {}", e.repo, rules.join(", "));
    }
    for w in dataset.windowed() {
        println!("{}: base {} then +{} by the last week", w.repo, w.base, w.gained_at(52));
    }
    write_dataset(&dataset, std::io::stdout().lock()).unwrap();
}
