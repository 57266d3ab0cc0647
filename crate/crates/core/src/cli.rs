//! The `stargaze` command line.
//!
//! Every option can also come from a TOML file passed with `--config`; flags
//! win over the file. Reports go to `--out` (default `out/`) and are removed
//! again if the command fails.

use std::collections::{BTreeSet, HashMap};
use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::eval::{self, FoldPlan, SweepReport};
use crate::ingest::{load_fetch, write_fetch};
use crate::ingest::{Credential, IngestError, RepoName, StarClient};
use crate::ksc::{beta_cv_sweep, cluster_dataset, select_k, ClusterModel, Init, KscError, KscParams};
use crate::ranking::{self, RankComparison, Ranking, RankingError};
use crate::regress::{self, Prediction, RegressError, RegressionModel, Scope};
use crate::report::{self, short_digest, sub_seed, Provenance};
use crate::synth::{synthetic_candidates, SynthConfig};
use crate::timeseries::{
    build_weekly_series, filter_dataset, read_dataset, write_dataset, Candidate, Dataset, SeriesError, StarSeries,
    WindowedSeries, DEFAULT_WINDOW,
};

#[derive(Parser, Debug)]
#[command(
    name = "stargaze",
    version,
    about = "Collect star histories, cluster growth trends and predict repository popularity"
)]
pub struct Cli {
    #[command(flatten)]
    pub options: Options,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Download star histories into <out>/events
    Fetch {
        /// Repositories as owner/name
        repos: Vec<String>,
        /// Fetch the N most-starred repositories instead
        #[arg(long)]
        top: Option<usize>,
    },
    /// Build the filtered weekly dataset from event files or synthetic families
    Build,
    /// Cluster the dataset with KSC
    Cluster,
    /// beta_CV over a range of k, and the k it selects
    Betacv,
    /// Fit the generic model and one model per cluster
    Fit,
    /// Apply fitted models to a dataset
    Predict,
    /// Cross-validated error sweeps and per-cluster improvements
    Eval,
    /// Predicted versus real rankings
    Rank,
    /// build, betacv, cluster, fit, predict, eval and rank in one run
    Pipeline,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fetch { .. } => "fetch",
            Command::Build => "build",
            Command::Cluster => "cluster",
            Command::Betacv => "betacv",
            Command::Fit => "fit",
            Command::Predict => "predict",
            Command::Eval => "eval",
            Command::Rank => "rank",
            Command::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Integers written as `"1..52"`, `"1,5,10..12"` or `"none"`. In the
/// config file a plain array also works.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IntList(pub Vec<usize>);

impl FromStr for IntList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(IntList(Vec::new()));
        }
        let num = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
        let mut out = Vec::new();
        for part in s.split(',') {
            if let Some((a, b)) = part.split_once("..") {
                let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
                if a > b {
                    return Err(format!("empty range {part:?}"));
                }
                out.extend(a..=b);
            } else {
                out.push(num(part)?);
            }
        }
        Ok(IntList(out))
    }
}

impl<'de> Deserialize<'de> for IntList {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(usize),
            Many(Vec<usize>),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::One(v) => Ok(IntList(vec![v])),
            Raw::Many(v) => Ok(IntList(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Options shared by all subcommands. Each one is also a key of the config
/// file, with `-` written as `_`.
#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// TOML file with any of these options
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Master seed; folds, clustering and synthetic data use named sub-seeds
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for all parallel work [default: all cores]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory [default: out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Report format [default: csv]
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// API base URL [default: $STARGAZE_API_URL, then the public API]
    #[arg(long, global = true)]
    pub api_url: Option<String>,

    /// Directory of event files to build from
    #[arg(long, global = true)]
    pub events: Option<PathBuf>,
    /// Build from N synthetic repositories per growth family
    #[arg(long, global = true)]
    pub synthetic: Option<usize>,
    /// Make every Nth synthetic repository younger than the window
    #[arg(long, global = true)]
    pub newcomer_every: Option<usize>,
    /// End of the star histories, RFC 3339 or YYYY-MM-DD [synthetic default: 2016-04-25]
    #[arg(long, global = true)]
    pub cutoff: Option<String>,
    /// Weeks in the analysis window [default: 52]
    #[arg(long, global = true)]
    pub window: Option<usize>,

    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub clusters: Option<PathBuf>,
    #[arg(long, global = true)]
    pub models: Option<PathBuf>,
    /// Real star counts for ranking (stars.csv from build) [default: dataset totals]
    #[arg(long, global = true)]
    pub stars: Option<PathBuf>,

    /// Number of clusters [pipeline default: selected by beta_CV; cluster default: 5]
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// [default: 2]
    #[arg(long, global = true)]
    pub k_min: Option<usize>,
    /// [default: 10]
    #[arg(long, global = true)]
    pub k_max: Option<usize>,
    /// Relative beta_CV change still counted as stable [default: 0.1]
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Following k values that must stay within the tolerance [default: 3]
    #[arg(long, global = true)]
    pub stability_window: Option<usize>,
    /// Largest KSC time shift [default: window / 4]
    #[arg(long, global = true)]
    pub q_max: Option<usize>,
    /// [default: 1]
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    /// random-partition or spread [default: random-partition]
    #[arg(long, global = true)]
    pub init: Option<Init>,
    /// [default: 100]
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,

    /// Target week [default: window]
    #[arg(long, global = true)]
    pub t: Option<usize>,
    /// Sweep grid of predictor weeks, e.g. "1..52" [default: 1..t]
    #[arg(long = "t-r", global = true)]
    pub t_r: Option<IntList>,
    /// Predictor weeks for fit, rank and the improvement table [default: t / 2]
    #[arg(long, global = true)]
    pub model_t_r: Option<usize>,
    /// Fractions of each target used as t_r; switches eval to multi-target
    #[arg(long, global = true, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Target weeks for the multi-target sweep [default: 26,52,104]
    #[arg(long, global = true)]
    pub targets: Option<IntList>,
    /// [default: 10]
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Cluster labels without specific models, e.g. "5" or "none" [default: 5]
    #[arg(long, global = true)]
    pub exclude: Option<IntList>,
    /// Top-k groups for rank correlation [default: 16, 32, 64, ... and all]
    #[arg(long, global = true)]
    pub topk: Option<IntList>,
    /// Keep only the first and last N rows of the rank table [default: all]
    #[arg(long, global = true)]
    pub head_tail: Option<usize>,
}

macro_rules! overlay {
    ($a:ident, $b:ident; $($f:ident),* $(,)?) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f; } )*
    };
}

impl Options {
    /// Fills every unset option from `file`.
    pub fn overlay(&mut self, file: Options) {
        overlay!(self, file;
            seed, jobs, out, format, api_url, events, synthetic, newcomer_every, cutoff, window,
            dataset, clusters, models, stars, k, k_min, k_max, tol, stability_window, q_max,
            restarts, init, max_iter, t, t_r, model_t_r, fractions, targets, folds, exclude,
            topk, head_tail,
        );
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn cutoff(&self) -> Result<DateTime<Utc>> {
        match &self.cutoff {
            Some(s) => parse_cutoff(s),
            None if self.synthetic.is_some() => parse_cutoff("2016-04-25"),
            None => Err(invalid("--cutoff is required when building from event files")),
        }
    }

    fn folds(&self) -> usize {
        self.folds.unwrap_or(eval::DEFAULT_FOLDS)
    }

    /// Zero-based indices of the excluded clusters.
    fn excluded(&self) -> Result<BTreeSet<usize>> {
        let labels = self.exclude.clone().unwrap_or(IntList(vec![5])).0;
        labels
            .into_iter()
            .map(|c| c.checked_sub(1).ok_or_else(|| invalid("cluster labels start at 1")))
            .collect()
    }

    fn ksc_params(&self, k: usize, window: usize) -> KscParams {
        let mut p = KscParams::new(k, window)
            .seed(sub_seed(self.seed(), "ksc"))
            .restarts(self.restarts.unwrap_or(1))
            .init(self.init.unwrap_or_default());
        if let Some(q) = self.q_max {
            p = p.q_max(q);
        }
        if let Some(m) = self.max_iter {
            p.max_iter = m;
        }
        p
    }
}

fn parse_cutoff(s: &str) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| invalid(format!("cutoff {s:?} is neither RFC 3339 nor YYYY-MM-DD")))
}

/// A failure reported as `{"error": {"kind", "message", "command"}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.into(),
            message: message.into(),
        }
    }

    pub fn to_json(&self, command: Option<&str>) -> String {
        json!({ "error": { "kind": self.kind, "message": self.message, "command": command } }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

fn invalid(message: impl Into<String>) -> CliError {
    CliError::new("InvalidParameter", message)
}

/// The enum variant name from a `Debug` rendering.
fn variant_name(e: &dyn fmt::Debug) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

macro_rules! from_module_error {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new(variant_name(&e), e.to_string())
            }
        })*
    };
}

from_module_error!(IngestError, SeriesError, KscError, RegressError, eval::EvalError, RankingError);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("Io", e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::new("Csv", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("Json", e.to_string())
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::new("Config", e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Parses `args` and runs the command. Returns the process exit code; errors
/// go to stderr as one JSON line.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", CliError::new("Usage", message.trim()).to_json(None));
            return 2;
        }
    };
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json(Some(name)));
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut opts = cli.options;
    if let Some(path) = &opts.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new("Config", format!("{}: {e}", path.display())))?;
        let file: Options = toml::from_str(&text)?;
        opts.overlay(file);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs())
        .build()
        .map_err(|e| CliError::new("Threads", e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Fetch { repos, top } => cmd_fetch(&opts, repos, *top),
        Command::Build => cmd_build(&opts),
        Command::Cluster => cmd_cluster(&opts),
        Command::Betacv => cmd_betacv(&opts),
        Command::Fit => cmd_fit(&opts),
        Command::Predict => cmd_predict(&opts),
        Command::Eval => cmd_eval(&opts),
        Command::Rank => cmd_rank(&opts),
        Command::Pipeline => cmd_pipeline(&opts),
    })
}

/// Files written by one command; all of them are deleted again unless the
/// command commits.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Outputs {
            dir,
            written: Vec::new(),
            committed: false,
        })
    }

    fn create(&mut self, name: &str, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("report");
        let tmp = path.with_file_name(format!(".{file_name}.part"));
        let written = File::create(&tmp).map_err(CliError::from).and_then(|f| {
            let mut w = BufWriter::new(f);
            write(&mut w)?;
            w.flush()?;
            Ok(())
        });
        if let Err(e) = written {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        fs::rename(&tmp, &path)?;
        self.written.push(path.clone());
        println!("wrote {}", path.display());
        Ok(path)
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// Output sink of one run: files, format and the provenance stamped on
/// every report.
struct Run {
    out: Outputs,
    prov: Provenance,
    format: Format,
}

impl Run {
    fn new(opts: &Options, config: Value) -> Result<Self> {
        Ok(Run {
            out: Outputs::new(opts.out_dir())?,
            prov: Provenance::new(&config)?,
            format: opts.format.unwrap_or_default(),
        })
    }

    fn report<R: Serialize>(&mut self, stem: &str, rows: &[R]) -> Result<PathBuf> {
        let Run { out, prov, format } = self;
        match format {
            Format::Csv => out.create(&format!("{stem}.csv"), |w| Ok(report::write_csv(w, prov, rows)?)),
            Format::Json => out.create(&format!("{stem}.json"), |w| Ok(report::write_json(w, prov, stem, rows)?)),
        }
    }

    /// A JSON model document with provenance and input digests added.
    fn document(&mut self, name: &str, mut doc: Value, inputs: Value) -> Result<PathBuf> {
        self.prov.stamp(&mut doc);
        if let (Value::Object(map), Value::Object(extra)) = (&mut doc, inputs) {
            map.extend(extra);
        }
        self.out.create(name, |w| {
            serde_json::to_writer_pretty(&mut *w, &doc)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    fn commit(self) {
        self.out.commit();
    }
}

fn cluster_label(c: usize) -> String {
    Scope::Cluster(c).to_string()
}

#[derive(Clone)]
struct Loaded {
    dataset: Dataset,
    digest: String,
    windowed: Vec<WindowedSeries>,
}

impl Loaded {
    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let dataset = read_dataset(bytes)?;
        let windowed = dataset.windowed();
        Ok(Loaded {
            dataset,
            digest: short_digest(bytes),
            windowed,
        })
    }

    fn window(&self) -> usize {
        self.dataset.window
    }
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| invalid(format!("{flag} is required")))
}

fn load_dataset(opts: &Options) -> Result<Loaded> {
    let path = require(&opts.dataset, "--dataset")?;
    let bytes = fs::read(path).map_err(|e| CliError::new("Io", format!("{}: {e}", path.display())))?;
    let loaded = Loaded::from_bytes(&bytes)?;
    if let Some(w) = opts.window.filter(|&w| w != loaded.window()) {
        return Err(invalid(format!(
            "--window {w} differs from the dataset's {}-week window",
            loaded.window()
        )));
    }
    if loaded.dataset.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    Ok(loaded)
}

/// Reads a model document, rejecting it if it was built from another dataset.
fn read_document(path: &Path, dataset_digest: &str) -> Result<(Vec<u8>, String)> {
    let bytes = fs::read(path).map_err(|e| CliError::new("Io", format!("{}: {e}", path.display())))?;
    let doc: Value = serde_json::from_slice(&bytes)?;
    if let Some(d) = doc.get("dataset_digest").and_then(Value::as_str) {
        if d != dataset_digest {
            return Err(CliError::new(
                "InputMismatch",
                format!(
                    "{} was built from dataset {d}, not from the given dataset {dataset_digest}",
                    path.display()
                ),
            ));
        }
    }
    let digest = short_digest(&bytes);
    Ok((bytes, digest))
}

fn load_clusters(path: &Path, data: &Loaded) -> Result<(ClusterModel, String)> {
    let (bytes, digest) = read_document(path, &data.digest)?;
    let model = ClusterModel::read_json(&bytes[..]).map_err(|m| CliError::new("ClusterModel", m))?;
    Ok((model, digest))
}

fn ksc_echo(p: &KscParams) -> Value {
    json!({
        "k": p.k,
        "q_max": p.q_max,
        "restarts": p.restarts,
        "init": p.init,
        "max_iter": p.max_iter,
        "ksc_seed": p.seed,
    })
}

#[derive(Serialize)]
struct FetchRow {
    repo: String,
    events: usize,
    pages: u32,
    complete: bool,
    clamped: usize,
    error: Option<String>,
}

fn cmd_fetch(opts: &Options, repos: &[String], top: Option<usize>) -> Result<()> {
    let client = match &opts.api_url {
        Some(url) => StarClient::new(url.clone(), Credential::from_env()),
        None => StarClient::from_env(),
    };
    let names: Vec<String> = match top {
        Some(n) => client
            .search_top_repos(n)?
            .into_iter()
            .map(|m| m.full_name.to_string())
            .collect(),
        None => repos.to_vec(),
    };
    if names.is_empty() {
        return Err(invalid("name repositories to fetch or pass --top N"));
    }
    let mut run = Run::new(opts, json!({ "command": "fetch", "repos": names }))?;
    let mut rows = Vec::with_capacity(names.len());
    let mut failures: Vec<(String, IngestError)> = Vec::new();
    for (name, result) in client.fetch_many(&names, opts.jobs()) {
        match result {
            Ok(rec) => {
                let file = format!("events/{}.events", rec.meta.full_name.file_stem());
                run.out.create(&file, |w| Ok(write_fetch(&rec, w)?))?;
                rows.push(FetchRow {
                    repo: name,
                    events: rec.events.len(),
                    pages: rec.pages_fetched,
                    complete: rec.complete,
                    clamped: rec.clamped,
                    error: None,
                });
            }
            Err(e) => {
                rows.push(FetchRow {
                    repo: name.clone(),
                    events: 0,
                    pages: 0,
                    complete: false,
                    clamped: 0,
                    error: Some(e.to_string()),
                });
                failures.push((name, e));
            }
        }
    }
    run.report("fetch_report", &rows)?;
    // fetched histories stay on disk even when other repositories failed
    run.commit();
    match failures.into_iter().next() {
        None => Ok(()),
        Some((name, e)) => {
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            Err(CliError::new(
                variant_name(&e),
                format!("{failed} of {} repositories failed; first {name}: {e}", rows.len()),
            ))
        }
    }
}

/// Where `build` takes its repositories from.
enum Source {
    Events(Vec<PathBuf>),
    Synthetic(SynthConfig, usize),
}

impl Source {
    fn from_opts(opts: &Options) -> Result<(Self, Value)> {
        let window = opts.window.unwrap_or(DEFAULT_WINDOW);
        match (&opts.events, opts.synthetic) {
            (Some(_), Some(_)) => Err(invalid("--events and --synthetic are exclusive")),
            (None, None) => Err(invalid("build needs --events DIR or --synthetic N")),
            (None, Some(per_family)) => {
                if per_family == 0 {
                    return Err(invalid("--synthetic needs at least one repository per family"));
                }
                let cfg = SynthConfig {
                    per_family,
                    window,
                    seed: sub_seed(opts.seed(), "synth"),
                    ..Default::default()
                };
                let every = opts.newcomer_every.unwrap_or(0);
                let echo = json!({ "synthetic": per_family, "newcomer_every": every, "synth_seed": cfg.seed });
                Ok((Source::Synthetic(cfg, every), echo))
            }
            (Some(dir), None) => {
                let mut files: Vec<PathBuf> = fs::read_dir(dir)
                    .map_err(|e| CliError::new("Io", format!("{}: {e}", dir.display())))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "events"))
                    .collect();
                files.sort();
                if files.is_empty() {
                    return Err(invalid(format!("no .events files in {}", dir.display())));
                }
                let mut digests = Vec::with_capacity(files.len());
                for f in &files {
                    digests.push(short_digest(&fs::read(f)?));
                }
                let echo = json!({ "events": short_digest(digests.concat().as_bytes()), "files": files.len() });
                Ok((Source::Events(files), echo))
            }
        }
    }

    fn candidates(&self, cutoff: DateTime<Utc>) -> Result<Vec<Candidate>> {
        match self {
            Source::Synthetic(cfg, every) => Ok(synthetic_candidates(cfg, cutoff, *every)),
            Source::Events(files) => files
                .iter()
                .map(|f| {
                    let rec = load_fetch(f)?;
                    let series = match build_weekly_series(&rec, cutoff) {
                        Ok(s) => s,
                        // created after the cutoff: kept as an empty, too-short series
                        Err(SeriesError::EmptyRange { .. }) => StarSeries {
                            repo: rec.meta.full_name.clone(),
                            created_at: rec.meta.created_at,
                            language: rec.meta.primary_language.clone(),
                            values: Vec::new(),
                        },
                        Err(e) => return Err(e.into()),
                    };
                    Ok(Candidate {
                        meta: rec.meta,
                        series,
                        complete: rec.complete,
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarsRow {
    pub repo: RepoName,
    pub stars: u64,
    pub in_dataset: bool,
}

#[derive(Serialize)]
struct ExclusionRow {
    repo: RepoName,
    rules: String,
}

struct Built {
    data: Loaded,
    bytes: Vec<u8>,
    exclusions: Vec<ExclusionRow>,
    stars: Vec<StarsRow>,
    considered: usize,
}

fn build_dataset(source: &Source, cutoff: DateTime<Utc>, window: usize) -> Result<Built> {
    let candidates = source.candidates(cutoff)?;
    let stars: Vec<(RepoName, u64)> = candidates
        .iter()
        .map(|c| {
            // a truncated history undercounts; fall back to the reported total
            let n = if c.complete { c.series.total() } else { c.meta.total_stars };
            (c.meta.full_name.clone(), n)
        })
        .collect();
    let (dataset, report) = filter_dataset(candidates, cutoff, window);
    if dataset.is_empty() {
        return Err(invalid(format!(
            "no repository passed the filters ({} considered)",
            report.considered
        )));
    }
    let mut bytes = Vec::new();
    write_dataset(&dataset, &mut bytes)?;
    let kept: BTreeSet<&RepoName> = dataset.series.iter().map(|s| &s.repo).collect();
    let stars = stars
        .into_iter()
        .map(|(repo, stars)| StarsRow {
            in_dataset: kept.contains(&repo),
            repo,
            stars,
        })
        .collect();
    let exclusions = report
        .excluded
        .iter()
        .map(|e| ExclusionRow {
            repo: e.repo.clone(),
            rules: e.rules.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";"),
        })
        .collect();
    Ok(Built {
        data: Loaded::from_bytes(&bytes)?,
        bytes,
        exclusions,
        stars,
        considered: report.considered,
    })
}

/// Writes `dataset.tsv`, `exclusions` and `stars`.
fn write_built(run: &mut Run, built: &Built) -> Result<()> {
    run.out.create("dataset.tsv", |w| Ok(w.write_all(&built.bytes)?))?;
    run.report("exclusions", &built.exclusions)?;
    run.report("stars", &built.stars)?;
    println!(
        "dataset: {} of {} repositories kept",
        built.data.dataset.len(),
        built.considered
    );
    Ok(())
}

fn cmd_build(opts: &Options) -> Result<()> {
    let (source, echo) = Source::from_opts(opts)?;
    let cutoff = opts.cutoff()?;
    let window = opts.window.unwrap_or(DEFAULT_WINDOW);
    if window == 0 {
        return Err(invalid("--window must be positive"));
    }
    let config = json!({ "command": "build", "source": echo, "cutoff": cutoff, "window": window });
    let built = build_dataset(&source, cutoff, window)?;
    let mut run = Run::new(opts, config)?;
    write_built(&mut run, &built)?;
    run.commit();
    Ok(())
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(invalid(format!("k = {k} outside 1..={n}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct AssignmentRow<'a> {
    repo: &'a RepoName,
    cluster: String,
}

#[derive(Serialize)]
struct ClusterRow {
    cluster: String,
    size: usize,
    growth_pct: f64,
}

#[derive(Serialize)]
struct CentroidRow {
    cluster: String,
    week: usize,
    value: f64,
}

fn cluster_step(run: &mut Run, data: &Loaded, params: &KscParams) -> Result<(ClusterModel, String)> {
    let model = cluster_dataset(&data.windowed, params)?;
    let mut bytes = Vec::new();
    model.write_json(&mut bytes)?;
    let doc: Value = serde_json::from_slice(&bytes)?;
    let path = run.document("clusters.json", doc, json!({ "dataset_digest": data.digest }))?;
    let digest = short_digest(&fs::read(path)?);
    let assignments: Vec<AssignmentRow> = model
        .assignment
        .iter()
        .map(|a| AssignmentRow {
            repo: &a.repo,
            cluster: cluster_label(a.cluster),
        })
        .collect();
    run.report("cluster_assignments", &assignments)?;
    let summary: Vec<ClusterRow> = model
        .sizes()
        .into_iter()
        .zip(model.growth_pct())
        .enumerate()
        .map(|(c, (size, growth_pct))| ClusterRow {
            cluster: cluster_label(c),
            size,
            growth_pct,
        })
        .collect();
    run.report("cluster_summary", &summary)?;
    let centroids: Vec<CentroidRow> = model
        .centroids
        .iter()
        .enumerate()
        .flat_map(|(c, mu)| {
            mu.iter().enumerate().map(move |(w, &value)| CentroidRow {
                cluster: cluster_label(c),
                week: w + 1,
                value,
            })
        })
        .collect();
    run.report("centroids", &centroids)?;
    Ok((model, digest))
}

fn cmd_cluster(opts: &Options) -> Result<()> {
    let data = load_dataset(opts)?;
    let k = opts.k.unwrap_or(5);
    check_k(k, data.dataset.len())?;
    let params = opts.ksc_params(k, data.window());
    let config = json!({ "command": "cluster", "dataset": data.digest, "ksc": ksc_echo(&params) });
    let mut run = Run::new(opts, config)?;
    cluster_step(&mut run, &data, &params)?;
    run.commit();
    Ok(())
}

struct BetaCvSettings {
    k_min: usize,
    k_max: usize,
    tol: f64,
    window: usize,
}

impl BetaCvSettings {
    fn from_opts(opts: &Options, n: usize) -> Result<Self> {
        let s = BetaCvSettings {
            k_min: opts.k_min.unwrap_or(2),
            k_max: opts.k_max.unwrap_or(10),
            tol: opts.tol.unwrap_or(0.10),
            window: opts.stability_window.unwrap_or(3),
        };
        if s.k_min < 2 || s.k_min > s.k_max {
            return Err(invalid(format!("k range {}..={} must start at 2 or more", s.k_min, s.k_max)));
        }
        if s.k_max >= n {
            return Err(invalid(format!("k_max = {} needs more than {n} repositories", s.k_max)));
        }
        if s.tol.is_nan() || s.tol < 0.0 {
            return Err(invalid("--tol must be non-negative"));
        }
        Ok(s)
    }

    fn echo(&self) -> Value {
        json!({ "k_min": self.k_min, "k_max": self.k_max, "tol": self.tol, "stability_window": self.window })
    }
}

#[derive(Serialize)]
struct BetaCvRow {
    k: usize,
    beta_cv: f64,
    selected: bool,
    stable: bool,
}

fn betacv_step(run: &mut Run, data: &Loaded, s: &BetaCvSettings, base: &KscParams) -> Result<usize> {
    let vectors: Vec<Vec<f64>> = data.windowed.iter().map(WindowedSeries::totals).collect();
    let (_, curve) = beta_cv_sweep(&vectors, s.k_min..=s.k_max, base)?;
    let pick = select_k(&curve, s.tol, s.window);
    let rows: Vec<BetaCvRow> = curve
        .entries
        .iter()
        .map(|&(k, beta_cv)| BetaCvRow {
            k,
            beta_cv,
            selected: k == pick.k,
            stable: pick.stable,
        })
        .collect();
    run.report("betacv", &rows)?;
    println!(
        "beta_CV selects k = {}{}",
        pick.k,
        if pick.stable { "" } else { " (no stable k; least unstable)" }
    );
    Ok(pick.k)
}

fn cmd_betacv(opts: &Options) -> Result<()> {
    let data = load_dataset(opts)?;
    let s = BetaCvSettings::from_opts(opts, data.dataset.len())?;
    let base = opts.ksc_params(s.k_min, data.window());
    let config = json!({
        "command": "betacv",
        "dataset": data.digest,
        "betacv": s.echo(),
        "ksc": ksc_echo(&base),
    });
    let mut run = Run::new(opts, config)?;
    betacv_step(&mut run, &data, &s, &base)?;
    run.commit();
    Ok(())
}

/// Settings of the regression and evaluation steps.
struct EvalSettings {
    t: usize,
    grid: Vec<usize>,
    model_t_r: usize,
    fractions: Option<Vec<f64>>,
    targets: Vec<usize>,
    folds: usize,
    fold_seed: u64,
    excluded: BTreeSet<usize>,
}

impl EvalSettings {
    /// `uses_model` is false for a sweep without clusters, which never fits
    /// at the model t_r.
    fn from_opts(opts: &Options, data: &Loaded, uses_model: bool) -> Result<Self> {
        let window = data.window();
        let t = opts.t.unwrap_or(window);
        if t == 0 || t > window {
            return Err(invalid(format!("t = {t} outside 1..={window}")));
        }
        let folds = opts.folds();
        let n = data.dataset.len();
        if folds < 2 || folds > n {
            return Err(invalid(format!("folds = {folds} outside 2..={n}")));
        }
        let fold_seed = sub_seed(opts.seed(), "folds");
        // each fit needs t_r + 2 training series
        let feasible = eval::max_feasible_t_r(&eval::kfold_split(n, folds, fold_seed)?).min(t);
        if feasible == 0 {
            return Err(invalid(format!("{n} repositories in {folds} folds cannot fit any model")));
        }
        let grid = opts.t_r.clone().map_or_else(|| (1..=feasible).collect(), |l| l.0);
        if grid.is_empty() || grid.iter().any(|&v| v == 0 || v > feasible) {
            return Err(invalid(format!(
                "t_r grid must be non-empty and inside 1..={feasible} ({n} repositories, {folds} folds, t = {t})"
            )));
        }
        let model_t_r = opts.model_t_r.unwrap_or((t / 2).max(1));
        if uses_model && (model_t_r == 0 || model_t_r > feasible) {
            return Err(invalid(format!("model t_r = {model_t_r} outside 1..={feasible}")));
        }
        let targets = opts.targets.clone().map_or_else(|| vec![26, 52, 104], |l| l.0);
        if let Some(fr) = &opts.fractions {
            if fr.is_empty() || fr.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                return Err(invalid("fractions must lie in (0, 1]"));
            }
            if targets.is_empty() || targets.contains(&0) {
                return Err(invalid("targets must be positive weeks"));
            }
        }
        Ok(EvalSettings {
            t,
            grid,
            model_t_r,
            fractions: opts.fractions.clone(),
            targets,
            folds,
            fold_seed,
            excluded: opts.excluded()?,
        })
    }

    fn echo(&self) -> Value {
        json!({
            "t": self.t,
            "t_r": self.grid,
            "model_t_r": self.model_t_r,
            "fractions": self.fractions,
            "targets": self.fractions.as_ref().map(|_| &self.targets),
            "folds": self.folds,
            "fold_seed": self.fold_seed,
            "exclude": self.excluded.iter().map(|c| c + 1).collect::<Vec<_>>(),
        })
    }

    fn plan(&self, n: usize) -> Result<FoldPlan> {
        Ok(eval::kfold_split(n, self.folds, self.fold_seed)?)
    }
}

fn fit_step(run: &mut Run, data: &Loaded, clusters: Option<(&ClusterModel, &str)>, s: &EvalSettings) -> Result<Vec<RegressionModel>> {
    let all: Vec<&WindowedSeries> = data.windowed.iter().collect();
    let mut models = vec![regress::fit(&all, s.model_t_r, s.t, Scope::Generic)?];
    let mut inputs = json!({ "dataset_digest": data.digest });
    if let Some((model, digest)) = clusters {
        inputs["clusters_digest"] = json!(digest);
        for (c, members) in eval::cluster_members(&data.windowed, model)?.iter().enumerate() {
            if s.excluded.contains(&c) || members.is_empty() {
                continue;
            }
            if members.len() < s.model_t_r + 2 {
                log::warn!("cluster {} has {} members, too few for t_r = {}; no specific model", cluster_label(c), members.len(), s.model_t_r);
                continue;
            }
            let train: Vec<&WindowedSeries> = members.iter().map(|&i| &data.windowed[i]).collect();
            models.push(regress::fit(&train, s.model_t_r, s.t, Scope::Cluster(c))?);
        }
    }
    let mut bytes = Vec::new();
    RegressionModel::write_json(&models, &mut bytes)?;
    run.document("models.json", serde_json::from_slice(&bytes)?, inputs)?;
    Ok(models)
}

fn cmd_fit(opts: &Options) -> Result<()> {
    let data = load_dataset(opts)?;
    let s = EvalSettings::from_opts(opts, &data, true)?;
    let clusters = opts.clusters.as_deref().map(|p| load_clusters(p, &data)).transpose()?;
    let config = json!({
        "command": "fit",
        "dataset": data.digest,
        "clusters": clusters.as_ref().map(|c| &c.1),
        "t": s.t,
        "model_t_r": s.model_t_r,
        "exclude": s.echo()["exclude"],
    });
    let mut run = Run::new(opts, config)?;
    fit_step(&mut run, &data, clusters.as_ref().map(|(m, d)| (m, d.as_str())), &s)?;
    run.commit();
    Ok(())
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    repo: &'a RepoName,
    scope: String,
    t_r: usize,
    t: usize,
    predicted: f64,
    actual: u64,
    rse: Option<f64>,
    pct_diff: Option<f64>,
}

fn prediction_row(p: &Prediction, scope: Scope, t_r: usize, t: usize) -> PredictionRow<'_> {
    PredictionRow {
        repo: &p.repo,
        scope: scope.to_string(),
        t_r,
        t,
        predicted: p.predicted,
        actual: p.actual,
        rse: p.rse,
        pct_diff: p.pct_diff(),
    }
}

fn predict_step(run: &mut Run, data: &Loaded, models: &[RegressionModel], clusters: Option<&ClusterModel>) -> Result<()> {
    let lookup = clusters.map(ClusterModel::lookup);
    let mut preds = Vec::new();
    for s in &data.windowed {
        let cluster = lookup.as_ref().and_then(|l| l.get(&s.repo).copied());
        for m in models {
            let applies = match m.scope {
                Scope::Generic => true,
                Scope::Cluster(c) => cluster == Some(c),
            };
            if applies {
                preds.push((m, m.predict_series(s)?));
            }
        }
    }
    let rows: Vec<PredictionRow> = preds
        .iter()
        .map(|(m, p)| prediction_row(p, m.scope, m.t_r, m.t))
        .collect();
    run.report("predictions", &rows)?;
    Ok(())
}

fn cmd_predict(opts: &Options) -> Result<()> {
    let data = load_dataset(opts)?;
    let path = require(&opts.models, "--models")?;
    let (bytes, models_digest) = read_document_any(path)?;
    let models = RegressionModel::read_json(&bytes[..]).map_err(|m| CliError::new("RegressionModel", m))?;
    let clusters = opts.clusters.as_deref().map(|p| load_clusters(p, &data)).transpose()?;
    let config = json!({
        "command": "predict",
        "dataset": data.digest,
        "models": models_digest,
        "clusters": clusters.as_ref().map(|c| &c.1),
    });
    let mut run = Run::new(opts, config)?;
    predict_step(&mut run, &data, &models, clusters.as_ref().map(|c| &c.0))?;
    run.commit();
    Ok(())
}

/// Models may be applied to any dataset, so no digest check here.
fn read_document_any(path: &Path) -> Result<(Vec<u8>, String)> {
    let bytes = fs::read(path).map_err(|e| CliError::new("Io", format!("{}: {e}", path.display())))?;
    let digest = short_digest(&bytes);
    Ok((bytes, digest))
}

#[derive(Serialize)]
struct SweepRowOut {
    scope: String,
    target_t: usize,
    t_r: usize,
    mrse: f64,
    ci95: f64,
    n: usize,
    zero_actual: usize,
    folds_shrunk: bool,
}

fn sweep_rows(reports: &[SweepReport]) -> Vec<SweepRowOut> {
    reports
        .iter()
        .flat_map(|r| {
            r.rows.iter().map(move |row| SweepRowOut {
                scope: r.scope.to_string(),
                target_t: r.target_t,
                t_r: row.t_r,
                mrse: row.mrse,
                ci95: row.ci95,
                n: row.n,
                zero_actual: row.zero_actual,
                folds_shrunk: r.folds_shrunk,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct ImprovementOut<'a> {
    repo: &'a RepoName,
    cluster: String,
    actual: u64,
    generic_predicted: f64,
    specific_predicted: f64,
    pct_diff_generic: f64,
    pct_diff_specific: f64,
    improvement_pp: f64,
}

#[derive(Serialize)]
struct QuartileOut {
    cluster: String,
    n: usize,
    min: f64,
    q1: f64,
    median: f64,
    q3: f64,
    max: f64,
}

/// Out-of-fold generic predictions for every repository and specific ones
/// where the repository's cluster has a model. Repositories of excluded
/// clusters keep the generic prediction on the specific side.
struct HeldOut {
    generic: Vec<Prediction>,
    specific: Vec<Option<(usize, Prediction)>>,
}

fn held_out(data: &Loaded, clusters: &ClusterModel, s: &EvalSettings, plan: &FoldPlan) -> Result<HeldOut> {
    let generic = eval::cross_validate(&data.windowed, s.model_t_r, s.t, plan, Scope::Generic)?;
    let mut by_index = eval::cross_validate_specific(
        &data.windowed,
        clusters,
        &s.excluded,
        s.model_t_r,
        s.t,
        s.folds,
        s.fold_seed,
    )?;
    let specific = (0..data.windowed.len()).map(|i| by_index.remove(&i)).collect();
    Ok(HeldOut { generic, specific })
}

fn eval_step(run: &mut Run, data: &Loaded, clusters: Option<&ClusterModel>, s: &EvalSettings) -> Result<Option<HeldOut>> {
    let plan = s.plan(data.windowed.len())?;
    let mut reports = match &s.fractions {
        Some(fr) => eval::evaluate_multi_target(&data.windowed, fr, &s.targets, &plan)?,
        None => vec![eval::evaluate_sweep(&data.windowed, &s.grid, s.t, &plan)?],
    };
    let Some(clusters) = clusters else {
        run.report("sweep", &sweep_rows(&reports))?;
        return Ok(None);
    };
    reports.extend(eval::evaluate_specific(
        &data.windowed,
        clusters,
        &s.excluded,
        &s.grid,
        s.t,
        s.folds,
        s.fold_seed,
    )?);
    run.report("sweep", &sweep_rows(&reports))?;

    let held = held_out(data, clusters, s, &plan)?;
    let (generic, specific): (Vec<Prediction>, Vec<Prediction>) = held
        .generic
        .iter()
        .zip(&held.specific)
        .filter_map(|(g, sp)| sp.as_ref().map(|(_, p)| (g.clone(), p.clone())))
        .unzip();
    let membership: HashMap<RepoName, usize> = clusters
        .assignment
        .iter()
        .map(|a| (a.repo.clone(), a.cluster))
        .collect();
    let (rows, summary) = eval::improvement(&generic, &specific, &membership)?;
    let rows: Vec<ImprovementOut> = rows
        .iter()
        .map(|r| ImprovementOut {
            repo: &r.repo,
            cluster: cluster_label(r.cluster),
            actual: r.actual,
            generic_predicted: r.generic_predicted,
            specific_predicted: r.specific_predicted,
            pct_diff_generic: r.pct_diff_generic,
            pct_diff_specific: r.pct_diff_specific,
            improvement_pp: r.improvement_pp,
        })
        .collect();
    run.report("improvement", &rows)?;
    let summary: Vec<QuartileOut> = summary
        .into_iter()
        .map(|q| QuartileOut {
            cluster: cluster_label(q.cluster),
            n: q.n,
            min: q.min,
            q1: q.q1,
            median: q.median,
            q3: q.q3,
            max: q.max,
        })
        .collect();
    run.report("improvement_summary", &summary)?;
    Ok(Some(held))
}

fn cmd_eval(opts: &Options) -> Result<()> {
    let data = load_dataset(opts)?;
    let s = EvalSettings::from_opts(opts, &data, opts.clusters.is_some())?;
    let clusters = opts.clusters.as_deref().map(|p| load_clusters(p, &data)).transpose()?;
    let config = json!({
        "command": "eval",
        "dataset": data.digest,
        "clusters": clusters.as_ref().map(|c| &c.1),
        "eval": s.echo(),
    });
    let mut run = Run::new(opts, config)?;
    eval_step(&mut run, &data, clusters.as_ref().map(|c| &c.0), &s)?;
    run.commit();
    Ok(())
}

#[derive(Serialize)]
struct RankSummaryRow {
    model: &'static str,
    rho: f64,
    p_note: String,
    correlated: usize,
    newcomers: usize,
    overestimated: usize,
    underestimated: usize,
    exact: usize,
}

impl RankSummaryRow {
    fn new(model: &'static str, c: &RankComparison) -> Self {
        RankSummaryRow {
            model,
            rho: c.rho,
            p_note: c.p_note.clone(),
            correlated: c.correlated,
            newcomers: c.newcomers,
            overestimated: c.overestimated,
            underestimated: c.underestimated,
            exact: c.exact,
        }
    }
}

#[derive(Serialize)]
struct TopKRow {
    model: &'static str,
    k: usize,
    rho: f64,
}

fn read_stars(path: &Path) -> Result<Vec<StarsRow>> {
    let file = File::open(path).map_err(|e| CliError::new("Io", format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|x| x == "json") {
        #[derive(Deserialize)]
        struct Doc {
            rows: Vec<StarsRow>,
        }
        let doc: Doc = serde_json::from_reader(std::io::BufReader::new(file))?;
        Ok(doc.rows)
    } else {
        Ok(report::read_csv(file)?)
    }
}

/// Powers of two from 16 below `n`, then `n` itself.
fn default_topk(n: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = std::iter::successors(Some(16usize), |k| k.checked_mul(2))
        .take_while(|&k| k < n)
        .collect();
    ks.push(n);
    ks
}

fn rank_step(
    run: &mut Run,
    data: &Loaded,
    held: &HeldOut,
    real: &[StarsRow],
    topk: Option<&[usize]>,
    head_tail: usize,
) -> Result<()> {
    let predicted = |use_specific: bool| -> Ranking {
        ranking::rank_by_stars(data.windowed.iter().enumerate().map(|(i, s)| {
            let p = match (&held.specific[i], use_specific) {
                (Some((_, p)), true) => p,
                _ => &held.generic[i],
            };
            (s.repo.clone(), s.base as f64 + p.predicted)
        }))
    };
    let real = ranking::rank_by_stars(real.iter().map(|r| (r.repo.clone(), r.stars as f64)));
    let (generic, specific) = (predicted(false), predicted(true));
    let g = ranking::compare_rankings(&generic, &real)?;
    let s = ranking::compare_rankings(&specific, &real)?;
    let mut table = ranking::rank_table(&g, &s)?;
    if head_tail > 0 {
        table = ranking::head_tail(&table, head_tail);
    }
    match run.format {
        Format::Csv => {
            let prov = run.prov.clone();
            run.out.create("ranking.csv", |w| {
                prov.write_header(&mut *w)?;
                Ok(ranking::write_rank_table(&table, w)?)
            })?;
        }
        Format::Json => {
            run.report("ranking", &table)?;
        }
    }
    run.report(
        "rank_summary",
        &[RankSummaryRow::new("generic", &g), RankSummaryRow::new("specific", &s)],
    )?;
    let ks = topk.map_or_else(|| default_topk(g.correlated), <[usize]>::to_vec);
    let mut rows = Vec::new();
    for (model, ranking) in [("generic", &generic), ("specific", &specific)] {
        for (k, rho) in ranking::topk_correlation(ranking, &real, &ks)? {
            rows.push(TopKRow { model, k, rho });
        }
    }
    run.report("topk", &rows)?;
    println!(
        "rho generic {:.4} ({}), specific {:.4} ({}); {} newcomers",
        g.rho, g.p_note, s.rho, s.p_note, g.newcomers
    );
    Ok(())
}

fn real_stars(opts: &Options, data: &Loaded) -> Result<(Vec<StarsRow>, String)> {
    match &opts.stars {
        Some(p) => {
            let rows = read_stars(p)?;
            Ok((rows, short_digest(&fs::read(p)?)))
        }
        None => Ok((dataset_stars(data), data.digest.clone())),
    }
}

fn dataset_stars(data: &Loaded) -> Vec<StarsRow> {
    data.dataset
        .series
        .iter()
        .map(|s| StarsRow {
            repo: s.repo.clone(),
            stars: s.total(),
            in_dataset: true,
        })
        .collect()
}

fn check_rank(s: &EvalSettings, window: usize) -> Result<()> {
    if s.t != window {
        return Err(invalid(format!(
            "ranking compares predicted stars at week t with the stars at the cutoff, so t must equal the window ({window})"
        )));
    }
    Ok(())
}

fn cmd_rank(opts: &Options) -> Result<()> {
    let data = load_dataset(opts)?;
    let s = EvalSettings::from_opts(opts, &data, true)?;
    check_rank(&s, data.window())?;
    let path = require(&opts.clusters, "--clusters")?;
    let (clusters, clusters_digest) = load_clusters(path, &data)?;
    let (real, stars_digest) = real_stars(opts, &data)?;
    let topk = opts.topk.clone().map(|l| l.0);
    let config = json!({
        "command": "rank",
        "dataset": data.digest,
        "clusters": clusters_digest,
        "stars": stars_digest,
        "eval": s.echo(),
        "topk": topk,
        "head_tail": opts.head_tail,
    });
    let mut run = Run::new(opts, config)?;
    let plan = s.plan(data.windowed.len())?;
    let held = held_out(&data, &clusters, &s, &plan)?;
    rank_step(&mut run, &data, &held, &real, topk.as_deref(), opts.head_tail.unwrap_or(0))?;
    run.commit();
    Ok(())
}

fn cmd_pipeline(opts: &Options) -> Result<()> {
    // the dataset comes from --dataset, or is built first
    let (data, built, input) = if opts.dataset.is_some() {
        let data = load_dataset(opts)?;
        let input = json!({ "dataset": data.digest });
        (data, None, input)
    } else {
        let (source, echo) = Source::from_opts(opts)?;
        let cutoff = opts.cutoff()?;
        let window = opts.window.unwrap_or(DEFAULT_WINDOW);
        let built = build_dataset(&source, cutoff, window)?;
        let input = json!({ "source": echo, "cutoff": cutoff, "window": window });
        (built.data.clone(), Some(built), input)
    };
    let n = data.dataset.len();
    let s = EvalSettings::from_opts(opts, &data, true)?;
    check_rank(&s, data.window())?;
    let beta = BetaCvSettings::from_opts(opts, n)?;
    if let Some(k) = opts.k {
        check_k(k, n)?;
    }
    let base = opts.ksc_params(beta.k_min, data.window());
    let (real, stars_input) = match (&opts.stars, &built) {
        (Some(p), _) => (read_stars(p)?, json!(short_digest(&fs::read(p)?))),
        (None, Some(b)) => (b.stars.clone(), json!("built")),
        (None, None) => (dataset_stars(&data), json!("dataset")),
    };
    let topk = opts.topk.clone().map(|l| l.0);
    let mut ksc = ksc_echo(&base);
    ksc["k"] = opts.k.map_or(json!("beta_cv"), |k| json!(k));
    let config = json!({
        "command": "pipeline",
        "input": input,
        "stars": stars_input,
        "seed": opts.seed(),
        "betacv": beta.echo(),
        "ksc": ksc,
        "eval": s.echo(),
        "topk": topk,
        "head_tail": opts.head_tail,
    });

    let mut run = Run::new(opts, config)?;
    if let Some(b) = &built {
        write_built(&mut run, b)?;
    }
    let selected = betacv_step(&mut run, &data, &beta, &base)?;
    let k = opts.k.unwrap_or(selected);
    let (clusters, clusters_digest) = cluster_step(&mut run, &data, &opts.ksc_params(k, data.window()))?;
    let models = fit_step(&mut run, &data, Some((&clusters, &clusters_digest)), &s)?;
    predict_step(&mut run, &data, &models, Some(&clusters))?;
    let held = eval_step(&mut run, &data, Some(&clusters), &s)?.expect("clusters given");
    rank_step(&mut run, &data, &held, &real, topk.as_deref(), opts.head_tail.unwrap_or(0))?;
    run.commit();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_lists() {
        assert_eq!("1..4".parse::<IntList>().unwrap().0, vec![1, 2, 3, 4]);
        assert_eq!("1..=3,7, 9".parse::<IntList>().unwrap().0, vec![1, 2, 3, 7, 9]);
        assert_eq!("none".parse::<IntList>().unwrap().0, Vec::<usize>::new());
        assert!("4..2".parse::<IntList>().is_err());
        assert!("x".parse::<IntList>().is_err());
    }

    #[test]
    fn file_options_fill_gaps_only() {
        let file: Options = toml::from_str("seed = 3\nk = 4\nt_r = \"1..5\"\nexclude = []\n").unwrap();
        let mut flags = Options {
            seed: Some(9),
            ..Default::default()
        };
        flags.overlay(file);
        assert_eq!(flags.seed, Some(9));
        assert_eq!(flags.k, Some(4));
        assert_eq!(flags.t_r.as_ref().unwrap().0, vec![1, 2, 3, 4, 5]);
        assert!(flags.excluded().unwrap().is_empty());
        assert!(toml::from_str::<Options>("sed = 3").is_err());
    }

    #[test]
    fn error_kinds() {
        let e: CliError = IngestError::NotFound("a/b".into()).into();
        assert_eq!(e.kind, "NotFound");
        let v: Value = serde_json::from_str(&e.to_json(Some("fetch"))).unwrap();
        assert_eq!(v["error"]["kind"], "NotFound");
        assert_eq!(v["error"]["command"], "fetch");
    }

    #[test]
    fn topk_defaults() {
        assert_eq!(default_topk(60), vec![16, 32, 60]);
        assert_eq!(default_topk(10), vec![10]);
        assert_eq!(default_topk(64), vec![16, 32, 64]);
    }

    #[test]
    fn cutoff_formats() {
        assert_eq!(parse_cutoff("2016-04-25").unwrap(), parse_cutoff("2016-04-25T00:00:00Z").unwrap());
        assert!(parse_cutoff("April").is_err());
    }
}
