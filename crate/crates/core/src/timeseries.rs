//! Weekly cumulative star series, dataset cleaning and windowing.
//!
//! Weeks are rolling 7-day bins anchored at each repository's creation
//! instant. Week `w` covers `[created + 7w days, created + 7(w+1) days)`;
//! the bin containing the cutoff is kept even though it is partial.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FetchRecord, RepoMeta, RepoName};

const WEEK_MS: i64 = 7 * 24 * 3600 * 1000;

pub const DATASET_FORMAT: &str = "stargaze-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Analysis window used throughout: the final 52 weeks of every series.
pub const DEFAULT_WINDOW: usize = 52;

#[derive(Error, Debug)]
pub enum SeriesError {
    #[error("cutoff {cutoff} precedes creation time {created_at}")]
    EmptyRange {
        created_at: DateTime<Utc>,
        cutoff: DateTime<Utc>,
    },

    #[error("{repo}: series has {weeks} weeks, window needs {window}")]
    TooShort {
        repo: RepoName,
        weeks: usize,
        window: usize,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("unsupported dataset file: format {found_format:?} version {found_version}")]
    FormatVersionMismatch {
        found_format: String,
        found_version: u32,
    },

    #[error("malformed dataset file at line {line}: {message}")]
    Format { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, SeriesError>;

/// Cumulative stars at the end of each week since creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarSeries {
    pub repo: RepoName,
    pub created_at: DateTime<Utc>,
    pub language: Option<String>,
    pub values: Vec<u64>,
}

impl StarSeries {
    pub fn weeks(&self) -> usize {
        self.values.len()
    }

    pub fn total(&self) -> u64 {
        self.values.last().copied().unwrap_or(0)
    }
}

/// Number of weekly bins between `created_at` and `cutoff`, inclusive of the
/// partial bin holding the cutoff.
pub fn week_count(created_at: DateTime<Utc>, cutoff: DateTime<Utc>) -> Result<usize> {
    if cutoff < created_at {
        return Err(SeriesError::EmptyRange { created_at, cutoff });
    }
    let span = (cutoff - created_at).num_milliseconds();
    Ok((span / WEEK_MS) as usize + 1)
}

/// Bins events into weekly cumulative counts. Events after `cutoff` are
/// ignored; events before `created_at` land in week 0.
pub fn weekly_cumulative<I>(
    created_at: DateTime<Utc>,
    cutoff: DateTime<Utc>,
    timestamps: I,
) -> Result<Vec<u64>>
where
    I: IntoIterator<Item = DateTime<Utc>>,
{
    let weeks = week_count(created_at, cutoff)?;
    let mut counts = vec![0u64; weeks];
    for t in timestamps {
        if t > cutoff {
            continue;
        }
        let offset = (t - created_at).num_milliseconds().max(0);
        let w = ((offset / WEEK_MS) as usize).min(weeks - 1);
        counts[w] += 1;
    }
    let mut acc = 0;
    for c in &mut counts {
        acc += *c;
        *c = acc;
    }
    Ok(counts)
}

pub fn build_weekly_series(record: &FetchRecord, cutoff: DateTime<Utc>) -> Result<StarSeries> {
    let meta = &record.meta;
    let values = weekly_cumulative(
        meta.created_at,
        cutoff,
        record.events.iter().map(|e| e.starred_at),
    )?;
    Ok(StarSeries {
        repo: meta.full_name.clone(),
        created_at: meta.created_at,
        language: meta.primary_language.clone(),
        values,
    })
}

/// A candidate repository for the dataset.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub meta: RepoMeta,
    pub series: StarSeries,
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExclusionRule {
    /// Star history truncated by the page cap.
    IncompleteHistory,
    /// No primary language reported.
    NoLanguage,
    /// Fewer weeks than the analysis window.
    TooShort,
}

impl fmt::Display for ExclusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionRule::IncompleteHistory => "incomplete-history",
            ExclusionRule::NoLanguage => "no-language",
            ExclusionRule::TooShort => "too-short",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub repo: RepoName,
    /// Every rule the repository violates, in rule order.
    pub rules: Vec<ExclusionRule>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub considered: usize,
    pub kept: usize,
    pub excluded: Vec<Exclusion>,
}

impl ExclusionReport {
    /// Repositories violating each rule. A repository violating several
    /// rules is counted under each of them.
    pub fn counts(&self) -> BTreeMap<ExclusionRule, usize> {
        let mut out = BTreeMap::new();
        for e in &self.excluded {
            for r in &e.rules {
                *out.entry(*r).or_default() += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub series: Vec<StarSeries>,
    pub cutoff: DateTime<Utc>,
    pub window: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Every series restricted to the dataset window.
    pub fn windowed(&self) -> Vec<WindowedSeries> {
        self.series
            .iter()
            .map(|s| window_last(s, self.window).expect("dataset series cover the window"))
            .collect()
    }
}

/// Drops incomplete histories, language-less repositories and series shorter
/// than `window`, reporting why each one went.
pub fn filter_dataset(
    candidates: Vec<Candidate>,
    cutoff: DateTime<Utc>,
    window: usize,
) -> (Dataset, ExclusionReport) {
    let mut report = ExclusionReport {
        considered: candidates.len(),
        ..Default::default()
    };
    let mut series = Vec::new();
    for c in candidates {
        let mut rules = Vec::new();
        if !c.complete {
            rules.push(ExclusionRule::IncompleteHistory);
        }
        if c.meta.primary_language.as_deref().is_none_or(str::is_empty) {
            rules.push(ExclusionRule::NoLanguage);
        }
        if c.series.weeks() < window {
            rules.push(ExclusionRule::TooShort);
        }
        if rules.is_empty() {
            series.push(c.series);
        } else {
            report.excluded.push(Exclusion {
                repo: c.meta.full_name,
                rules,
            });
        }
    }
    report.kept = series.len();
    (
        Dataset {
            series,
            cutoff,
            window,
        },
        report,
    )
}

/// Stars gained within the last `window` weeks of a series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowedSeries {
    pub repo: RepoName,
    /// Cumulative stars just before the window opens.
    pub base: u64,
    /// `gained[i]`: stars gained since the window opened, at week `i + 1`.
    pub gained: Vec<u64>,
}

impl WindowedSeries {
    pub fn window(&self) -> usize {
        self.gained.len()
    }

    /// Stars gained by week `week` of the window (1-based).
    pub fn gained_at(&self, week: usize) -> u64 {
        self.gained[week - 1]
    }

    /// Total star counts across the window: the vector clustered by KSC.
    pub fn totals(&self) -> Vec<f64> {
        self.gained
            .iter()
            .map(|&g| (self.base + g) as f64)
            .collect()
    }
}

pub fn window_last(series: &StarSeries, window: usize) -> Result<WindowedSeries> {
    let weeks = series.weeks();
    if window == 0 || weeks < window {
        return Err(SeriesError::TooShort {
            repo: series.repo.clone(),
            weeks,
            window,
        });
    }
    let start = weeks - window;
    let base = if start == 0 {
        0
    } else {
        series.values[start - 1]
    };
    Ok(WindowedSeries {
        repo: series.repo.clone(),
        base,
        gained: series.values[start..].iter().map(|v| v - base).collect(),
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    cutoff: Option<DateTime<Utc>>,
    window: Option<usize>,
}

/// Header line, then `full_name  created_at  language  v0,v1,...` per line.
pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        cutoff: Some(ds.cutoff),
        window: Some(ds.window),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| SeriesError::Io(e.into()))?;
    w.write_all(b"\n")?;
    for s in &ds.series {
        let values: Vec<String> = s.values.iter().map(u64::to_string).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            s.repo,
            s.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            s.language.as_deref().unwrap_or(""),
            values.join(",")
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(SeriesError::Format {
        line: 1,
        message: "empty file".into(),
    })??;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| SeriesError::Format {
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(SeriesError::FormatVersionMismatch {
            found_format: header.format,
            found_version: header.version,
        });
    }
    let (Some(cutoff), Some(window)) = (header.cutoff, header.window) else {
        return Err(SeriesError::Format {
            line: 1,
            message: "header needs cutoff and window".into(),
        });
    };
    let mut series = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| SeriesError::Format {
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, created, lang, values] = fields[..] else {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        };
        let repo = RepoName::parse(name).map_err(|e| bad(e.to_string()))?;
        let created_at = DateTime::parse_from_rfc3339(created)
            .map_err(|e| bad(e.to_string()))?
            .with_timezone(&Utc);
        let values = if values.is_empty() {
            Vec::new()
        } else {
            values
                .split(',')
                .map(|v| v.parse::<u64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(e.to_string()))?
        };
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(bad(format!("{repo}: weekly values decrease")));
        }
        if values.len() < window {
            return Err(bad(format!(
                "{repo}: {} weeks, shorter than the {window}-week window",
                values.len()
            )));
        }
        series.push(StarSeries {
            repo,
            created_at,
            language: (!lang.is_empty()).then(|| lang.to_string()),
            values,
        });
    }
    Ok(Dataset {
        series,
        cutoff,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::StarEvent;
    use chrono::{Duration, TimeZone};
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2015, 4, 25, 9, 30, 0).unwrap()
    }

    fn record(offsets_hours: &[i64], lang: Option<&str>) -> FetchRecord {
        let repo = RepoName::parse("o/r").unwrap();
        let events = offsets_hours
            .iter()
            .enumerate()
            .map(|(i, h)| StarEvent {
                repo: repo.clone(),
                starred_at: t0() + Duration::hours(*h),
                user: format!("u{i}"),
            })
            .collect();
        FetchRecord::from_raw(
            RepoMeta {
                full_name: repo,
                created_at: t0(),
                primary_language: lang.map(Into::into),
                total_stars: offsets_hours.len() as u64,
            },
            events,
            true,
            1,
        )
    }

    #[test]
    fn hand_counted_weeks() {
        // 3 stars in week 0, 2 in week 2; cutoff inside week 2
        let rec = record(&[1, 30, 160, 14 * 24 + 5, 20 * 24], Some("C"));
        let s = build_weekly_series(&rec, t0() + Duration::days(20) + Duration::hours(12)).unwrap();
        assert_eq!(s.values, [3, 3, 5]);
    }

    #[test]
    fn week_boundary_is_exclusive() {
        let rec = record(&[7 * 24], Some("C"));
        let s = build_weekly_series(&rec, t0() + Duration::days(8)).unwrap();
        assert_eq!(s.values, [0, 1]);
    }

    #[test]
    fn empty_history_is_all_zero() {
        let rec = record(&[], Some("C"));
        let s = build_weekly_series(&rec, t0() + Duration::days(70)).unwrap();
        assert_eq!(s.weeks(), 11);
        assert!(s.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn cutoff_before_creation_fails() {
        let rec = record(&[], None);
        assert!(matches!(
            build_weekly_series(&rec, t0() - Duration::seconds(1)),
            Err(SeriesError::EmptyRange { .. })
        ));
        // cutoff exactly at creation is a single partial week
        assert_eq!(build_weekly_series(&rec, t0()).unwrap().values, [0]);
    }

    #[test]
    fn events_after_cutoff_are_ignored() {
        let rec = record(&[1, 24 * 30], Some("C"));
        let s = build_weekly_series(&rec, t0() + Duration::days(10)).unwrap();
        assert_eq!(s.values, [1, 1]);
    }

    #[test]
    fn window_examples() {
        let s = StarSeries {
            repo: RepoName::parse("o/r").unwrap(),
            created_at: t0(),
            language: None,
            values: vec![1, 2, 3, 4],
        };
        let w = window_last(&s, 2).unwrap();
        assert_eq!(w.gained, [1, 2]);
        assert_eq!(w.base, 2);
        let whole = window_last(&s, 4).unwrap();
        assert_eq!(whole.gained, s.values);
        assert_eq!(whole.base, 0);
        assert!(matches!(window_last(&s, 5), Err(SeriesError::TooShort { .. })));
        assert_eq!(w.totals(), [3.0, 4.0]);
    }

    fn candidate(name: &str, weeks: usize, lang: Option<&str>, complete: bool) -> Candidate {
        let repo = RepoName::parse(name).unwrap();
        Candidate {
            meta: RepoMeta {
                full_name: repo.clone(),
                created_at: t0(),
                primary_language: lang.map(Into::into),
                total_stars: weeks as u64,
            },
            series: StarSeries {
                repo,
                created_at: t0(),
                language: lang.map(Into::into),
                values: (1..=weeks as u64).collect(),
            },
            complete,
        }
    }

    #[test]
    fn filter_rules() {
        let cands = vec![
            candidate("a/kept", 60, Some("Go"), true),
            candidate("a/young", 10, Some("Go"), true),
            candidate("a/nolang", 60, None, true),
            candidate("a/capped", 60, Some("JS"), false),
            candidate("a/everything", 3, Some(""), false),
        ];
        let (ds, report) = filter_dataset(cands, t0(), 52);
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.series[0].repo.as_str(), "a/kept");
        assert_eq!(report.considered, 5);
        assert_eq!(report.kept, 1);
        let rules: BTreeMap<_, _> = report
            .excluded
            .iter()
            .map(|e| (e.repo.as_str(), e.rules.clone()))
            .collect();
        assert_eq!(rules["a/young"], [ExclusionRule::TooShort]);
        assert_eq!(rules["a/nolang"], [ExclusionRule::NoLanguage]);
        assert_eq!(rules["a/capped"], [ExclusionRule::IncompleteHistory]);
        assert_eq!(rules["a/everything"].len(), 3);
        let counts = report.counts();
        assert_eq!(counts[&ExclusionRule::TooShort], 2);
        assert_eq!(counts[&ExclusionRule::NoLanguage], 2);
        assert_eq!(counts[&ExclusionRule::IncompleteHistory], 2);
    }

    #[test]
    fn dataset_file_roundtrip() {
        let cands = vec![
            candidate("a/one", 55, Some("Rust"), true),
            candidate("b/two", 52, Some("C++"), true),
        ];
        let (ds, _) = filter_dataset(cands, t0() + Duration::days(400), 52);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn dataset_rejects_decreasing_values() {
        let text = format!(
            "{{\"format\":\"{DATASET_FORMAT}\",\"version\":1,\"cutoff\":\"2016-04-25T00:00:00Z\",\"window\":2}}\n\
             o/r\t2015-01-01T00:00:00Z\tC\t1,3,2\n"
        );
        assert!(matches!(
            read_dataset(text.as_bytes()),
            Err(SeriesError::Format { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn series_invariants(
            mut hours in proptest::collection::vec(0i64..24 * 7 * 80, 0..200),
            cutoff_days in 0i64..600,
            window in 1usize..20,
        ) {
            let cutoff = t0() + Duration::days(cutoff_days);
            let rec = record(&hours, Some("C"));
            let s = build_weekly_series(&rec, cutoff).unwrap();

            prop_assert_eq!(s.weeks(), (cutoff_days / 7) as usize + 1);
            prop_assert!(s.values.windows(2).all(|w| w[0] <= w[1]));
            let in_range = hours.iter().filter(|h| t0() + Duration::hours(**h) <= cutoff).count();
            prop_assert_eq!(s.total(), in_range as u64);

            // permutation invariance
            hours.reverse();
            let shuffled = build_weekly_series(&record(&hours, Some("C")), cutoff).unwrap();
            prop_assert_eq!(&shuffled.values, &s.values);

            if s.weeks() >= window {
                let w = window_last(&s, window).unwrap();
                prop_assert_eq!(w.gained.len(), window);
                prop_assert!(w.gained.windows(2).all(|p| p[0] <= p[1]));
                prop_assert_eq!(w.gained[window - 1] + w.base, s.total());
            }
        }
    }
}
