use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{TimeZone, Utc};
use serde_json::Value;
use stargaze::mock::{MockRepo, MockServer};

fn stargaze(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stargaze"))
        .current_dir(dir)
        .env_remove("STARGAZE_TOKEN")
        .env_remove("GITHUB_TOKEN")
        .args(args)
        .output()
        .expect("spawn stargaze")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = stargaze(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// The `error` object a failed run prints on stderr.
fn error_doc(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no error document in {text}"));
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn config_line(path: &Path) -> Value {
    let text = fs::read_to_string(path).unwrap();
    let line = text.lines().find_map(|l| l.strip_prefix("# config: ")).unwrap();
    serde_json::from_str(line).unwrap()
}

#[test]
fn pipeline_is_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let common = ["pipeline", "--synthetic", "12", "--newcomer-every", "10", "--seed", "7"];
    ok(tmp.path(), &[&common[..], &["--jobs", "1", "--out", "a"]].concat());
    ok(tmp.path(), &[&common[..], &["--jobs", "4", "--out", "b"]].concat());
    let (a, b) = (files(&tmp.path().join("a")), files(&tmp.path().join("b")));
    assert_eq!(a.len(), 16);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.file_name(), y.file_name());
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{x:?} differs");
    }
    let ranking = fs::read_to_string(tmp.path().join("a/ranking.csv")).unwrap();
    let newcomers = ranking.lines().filter(|l| l.ends_with(",---,---,---,---")).count();
    assert_eq!(newcomers, 6);
}

#[test]
fn sweep_has_one_row_per_predictor_week() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["build", "--synthetic", "12", "--seed", "3"]);
    ok(tmp.path(), &["eval", "--dataset", "out/dataset.tsv", "--t", "52", "--t-r", "1..52", "--seed", "3"]);
    let text = fs::read_to_string(tmp.path().join("out/sweep.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 52);
    assert!(rows.iter().all(|r| r.starts_with("generic,52,")));
    // 53 training series are needed at t_r = 52 and 54 remain
    let out = stargaze(
        tmp.path(),
        &["eval", "--dataset", "out/dataset.tsv", "--t-r", "53", "--out", "x"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("x").join("sweep.csv").exists());
}

#[test]
fn fetch_against_the_mock() {
    let created = Utc.with_ymd_and_hms(2014, 6, 1, 0, 0, 0).unwrap();
    let hour = chrono::Duration::hours(1);
    let mut repos: Vec<MockRepo> = (0..7)
        .map(|i| MockRepo::synthetic(&format!("org/p{i}"), created, 20 + 10 * i, hour, Some("Go")))
        .collect();
    repos.push(MockRepo::synthetic("big/one", created, 40_050, chrono::Duration::minutes(1), Some("C")));
    let server = MockServer::start(repos).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let url = server.url();

    ok(tmp.path(), &["fetch", "--top", "5", "--api-url", url, "--out", "top"]);
    let events: Vec<String> = files(&tmp.path().join("top/events"))
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        events,
        ["big__one.events", "org__p3.events", "org__p4.events", "org__p5.events", "org__p6.events"]
    );
    let report = fs::read_to_string(tmp.path().join("top/fetch_report.csv")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("big/one,40000,400,false,")), "{report}");

    let out = stargaze(tmp.path(), &["fetch", "org/p1", "no/such", "--api-url", url, "--out", "part"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_doc(&out);
    assert_eq!(err["kind"], "NotFound");
    assert_eq!(err["command"], "fetch");
    // the repository that did arrive is kept
    assert!(tmp.path().join("part/events/org__p1.events").exists());

    let built = stargaze(
        tmp.path(),
        &["build", "--events", "top/events", "--cutoff", "2016-01-01", "--out", "ds"],
    );
    assert!(built.status.success(), "{}", String::from_utf8_lossy(&built.stderr));
    let excluded = fs::read_to_string(tmp.path().join("ds/exclusions.csv")).unwrap();
    let rows: Vec<&str> = excluded.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 1, "{excluded}");
    assert!(rows[0].starts_with("big/one,"), "{excluded}");
}

#[test]
fn clusters_from_another_dataset_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["build", "--synthetic", "6", "--seed", "1", "--out", "a"]);
    ok(tmp.path(), &["build", "--synthetic", "6", "--seed", "2", "--out", "b"]);
    ok(tmp.path(), &["cluster", "--dataset", "a/dataset.tsv", "--k", "3", "--out", "a"]);
    let out = stargaze(
        tmp.path(),
        &["fit", "--dataset", "b/dataset.tsv", "--clusters", "a/clusters.json", "--model-t-r", "4", "--out", "c"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_doc(&out)["kind"], "InputMismatch");
    assert!(!tmp.path().join("c/models.json").exists());
}

#[test]
fn failed_rank_leaves_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["build", "--synthetic", "12", "--seed", "5"]);
    ok(tmp.path(), &["cluster", "--dataset", "out/dataset.tsv", "--k", "2", "--seed", "5"]);
    let stars = fs::read_to_string(tmp.path().join("out/stars.csv")).unwrap();
    let mut lines: Vec<&str> = stars.lines().collect();
    let dropped = lines.iter().position(|l| l.contains(",true")).unwrap();
    lines.remove(dropped);
    fs::write(tmp.path().join("stars.csv"), lines.join("\n")).unwrap();
    let out = stargaze(
        tmp.path(),
        &[
            "rank", "--dataset", "out/dataset.tsv", "--clusters", "out/clusters.json",
            "--stars", "stars.csv", "--out", "r", "--exclude", "none",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_doc(&out)["kind"], "SetMismatch");
    let left = if tmp.path().join("r").exists() { files(&tmp.path().join("r")) } else { Vec::new() };
    assert!(left.is_empty(), "{left:?}");
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "seed = 11\nfolds = 5\nt_r = \"1..4\"\nsynthetic = 6\n",
    )
    .unwrap();
    ok(tmp.path(), &["build", "--config", "run.toml"]);
    ok(tmp.path(), &["eval", "--config", "run.toml", "--dataset", "out/dataset.tsv", "--folds", "4"]);
    let cfg = config_line(&tmp.path().join("out/sweep.csv"));
    assert_eq!(cfg["eval"]["folds"], 4);
    assert_eq!(cfg["eval"]["t_r"], serde_json::json!([1, 2, 3, 4]));
    assert_eq!(cfg["eval"]["fold_seed"], stargaze::report::sub_seed(11, "folds"));

    fs::write(tmp.path().join("bad.toml"), "sed = 3\n").unwrap();
    let out = stargaze(tmp.path(), &["build", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn json_reports_carry_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["build", "--synthetic", "6", "--seed", "1", "--format", "json"]);
    ok(tmp.path(), &["betacv", "--dataset", "out/dataset.tsv", "--k-max", "4", "--format", "json"]);
    let doc: Value = serde_json::from_slice(&fs::read(tmp.path().join("out/betacv.json")).unwrap()).unwrap();
    assert_eq!(doc["report"], "betacv");
    assert_eq!(doc["config_hash"].as_str().unwrap().len(), 16);
    assert_eq!(doc["config"]["betacv"]["k_max"], 4);
    assert_eq!(doc["rows"].as_array().unwrap().len(), 3);
    assert!(!tmp.path().join("out/betacv.csv").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [&["build", "--bogus"][..], &["eval", "--folds", "ten"], &[]] {
        let out = stargaze(tmp.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(error_doc(&out)["kind"], "Usage");
    }
    let out = stargaze(tmp.path(), &["build"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("out").exists());
}
