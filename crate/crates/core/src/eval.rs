//! Cross-validated evaluation of generic and per-cluster models.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RepoName;
use crate::ksc::ClusterModel;
use crate::regress::{self, mrse, ErrorSummary, Prediction, RegressError, Scope};
use crate::timeseries::WindowedSeries;

pub const DEFAULT_FOLDS: usize = 10;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum EvalError {
    #[error("cannot split {n} items into {k} folds")]
    TooFewItems { n: usize, k: usize },
    #[error("target week {t} exceeds the {window}-week window")]
    WindowTooSmall { t: usize, window: usize },
    #[error("{scope} t_r={t_r}: {source}")]
    Fit {
        scope: Scope,
        t_r: usize,
        #[source]
        source: RegressError,
    },
    #[error("{0} is not covered by the cluster model")]
    Unclustered(RepoName),
    #[error("prediction sets differ: {0}")]
    Mismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// A seeded partition of `0..n` into folds whose sizes differ by at most 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }
}

/// Shuffles `0..n` with the seed and cuts it into `k` consecutive runs; the
/// first `n % k` folds get the extra item.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 || n < k {
        return Err(EvalError::TooFewItems { n, k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(FoldPlan { seed, folds })
}

/// Out-of-fold predictions: each fold is predicted by a model fitted on the
/// remaining folds. Output follows dataset order.
pub fn cross_validate(
    data: &[WindowedSeries],
    t_r: usize,
    t: usize,
    plan: &FoldPlan,
    scope: Scope,
) -> Result<Vec<Prediction>> {
    if plan.n() != data.len() {
        return Err(EvalError::InvalidParameter(format!(
            "fold plan covers {} items, data has {}",
            plan.n(),
            data.len()
        )));
    }
    let fit_err = |source| EvalError::Fit { scope, t_r, source };
    let per_fold: Vec<Vec<(usize, Prediction)>> = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(f, held_out)| {
            let train: Vec<&WindowedSeries> = plan
                .folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, fold)| fold.iter().map(|&i| &data[i]))
                .collect();
            let model = regress::fit(&train, t_r, t, scope).map_err(fit_err)?;
            held_out
                .iter()
                .map(|&i| Ok((i, model.predict_series(&data[i]).map_err(fit_err)?)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<(usize, Prediction)> = per_fold.into_iter().flatten().collect();
    out.sort_by_key(|(i, _)| *i);
    Ok(out.into_iter().map(|(_, p)| p).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t_r: usize,
    pub mrse: f64,
    pub ci95: f64,
    /// Predictions with a defined RSE.
    pub n: usize,
    /// Predictions skipped because the actual value was 0.
    pub zero_actual: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scope: Scope,
    pub target_t: usize,
    pub rows: Vec<SweepRow>,
    /// Set when a cluster had fewer members than folds.
    #[serde(default)]
    pub folds_shrunk: bool,
}

fn row(scope: Scope, t_r: usize, preds: &[Prediction]) -> Result<SweepRow> {
    let zero_actual = preds.iter().filter(|p| p.rse.is_none()).count();
    let ErrorSummary { mean, ci95, n } =
        mrse(preds).map_err(|source| EvalError::Fit { scope, t_r, source })?;
    Ok(SweepRow {
        t_r,
        mrse: mean,
        ci95,
        n,
        zero_actual,
    })
}

fn sorted_grid(t_r_values: &[usize], t: usize) -> Result<Vec<usize>> {
    let grid: BTreeSet<usize> = t_r_values.iter().copied().collect();
    if grid.is_empty() {
        return Err(EvalError::InvalidParameter("empty t_r grid".into()));
    }
    if let Some(bad) = grid.iter().find(|&&v| v == 0 || v > t) {
        return Err(EvalError::InvalidParameter(format!(
            "t_r = {bad} outside 1..={t}"
        )));
    }
    Ok(grid.into_iter().collect())
}

/// mRSE of out-of-fold predictions for every `t_r` in the grid, pooling all
/// held-out predictions before averaging.
pub fn evaluate_sweep(
    data: &[WindowedSeries],
    t_r_values: &[usize],
    t: usize,
    plan: &FoldPlan,
) -> Result<SweepReport> {
    sweep_scoped(data, t_r_values, t, plan, Scope::Generic)
}

fn sweep_scoped(
    data: &[WindowedSeries],
    t_r_values: &[usize],
    t: usize,
    plan: &FoldPlan,
    scope: Scope,
) -> Result<SweepReport> {
    check_window(data, t)?;
    let grid = sorted_grid(t_r_values, t)?;
    let rows = grid
        .par_iter()
        .map(|&t_r| row(scope, t_r, &cross_validate(data, t_r, t, plan, scope)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        scope,
        target_t: t,
        rows,
        folds_shrunk: false,
    })
}

/// Smallest training set any fold of the plan leaves.
pub fn min_training(plan: &FoldPlan) -> usize {
    plan.n() - plan.folds.iter().map(Vec::len).max().unwrap_or(0)
}

/// Largest `t_r` every training set of the plan can fit (a fit needs
/// `t_r + 2` series), or 0 if none.
pub fn max_feasible_t_r(plan: &FoldPlan) -> usize {
    min_training(plan).saturating_sub(2)
}

fn check_window(data: &[WindowedSeries], t: usize) -> Result<()> {
    if let Some(s) = data.iter().find(|s| s.window() < t) {
        return Err(EvalError::WindowTooSmall {
            t,
            window: s.window(),
        });
    }
    Ok(())
}

/// `t_r = round(fraction * t)`, at least 1.
pub fn fraction_to_t_r(fraction: f64, t: usize) -> usize {
    ((fraction * t as f64).round() as usize).clamp(1, t)
}

/// One generic sweep per target week, with `t_r` derived from fractions of
/// the target.
pub fn evaluate_multi_target(
    data: &[WindowedSeries],
    fractions: &[f64],
    targets: &[usize],
    plan: &FoldPlan,
) -> Result<Vec<SweepReport>> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(EvalError::InvalidParameter(format!(
            "fraction {f} outside (0, 1]"
        )));
    }
    let window = data.iter().map(WindowedSeries::window).min().unwrap_or(0);
    if let Some(&t) = targets.iter().max() {
        if t > window {
            return Err(EvalError::WindowTooSmall { t, window });
        }
    }
    targets
        .iter()
        .map(|&t| {
            let grid: Vec<usize> = fractions.iter().map(|f| fraction_to_t_r(*f, t)).collect();
            evaluate_sweep(data, &grid, t, plan)
        })
        .collect()
}

/// Member indices of each cluster, in dataset order.
pub fn cluster_members(data: &[WindowedSeries], model: &ClusterModel) -> Result<Vec<Vec<usize>>> {
    let lookup = model.lookup();
    let mut members = vec![Vec::new(); model.k];
    for (i, s) in data.iter().enumerate() {
        let c = *lookup
            .get(&s.repo)
            .ok_or_else(|| EvalError::Unclustered(s.repo.clone()))?;
        members[c].push(i);
    }
    Ok(members)
}

/// Per-cluster fold plans drawn from the same seed. A cluster with fewer
/// members than `folds` gets one fold per member (flagged).
fn cluster_plans(members: &[Vec<usize>], folds: usize, seed: u64) -> Vec<Option<(FoldPlan, bool)>> {
    members
        .iter()
        .map(|m| {
            let k = folds.min(m.len());
            kfold_split(m.len(), k, seed)
                .ok()
                .map(|plan| (plan, k < folds))
        })
        .collect()
}

/// Per-cluster sweeps with models trained only inside each cluster. Folds
/// are drawn within each cluster; excluded clusters are skipped. A cluster
/// only gets rows for the `t_r` values its training folds can fit.
pub fn evaluate_specific(
    data: &[WindowedSeries],
    clusters: &ClusterModel,
    excluded: &BTreeSet<usize>,
    t_r_values: &[usize],
    t: usize,
    folds: usize,
    seed: u64,
) -> Result<Vec<SweepReport>> {
    let members = cluster_members(data, clusters)?;
    let plans = cluster_plans(&members, folds, seed);
    let mut out = Vec::new();
    for (c, (idx, plan)) in members.iter().zip(plans).enumerate() {
        if excluded.contains(&c) {
            continue;
        }
        let Some((plan, shrunk)) = plan else {
            log::warn!("cluster C{} is empty; skipped", c + 1);
            continue;
        };
        if shrunk {
            log::warn!(
                "cluster C{} has {} members, fewer than {folds} folds",
                c + 1,
                idx.len()
            );
        }
        let feasible = max_feasible_t_r(&plan);
        let grid: Vec<usize> = t_r_values.iter().copied().filter(|&v| v <= feasible).collect();
        if grid.len() < t_r_values.len() {
            log::warn!(
                "cluster C{}: {} members support t_r <= {feasible} only; larger t_r skipped",
                c + 1,
                idx.len()
            );
        }
        if grid.is_empty() {
            continue;
        }
        let subset: Vec<WindowedSeries> = idx.iter().map(|&i| data[i].clone()).collect();
        let mut report = sweep_scoped(&subset, &grid, t, &plan, Scope::Cluster(c))?;
        report.folds_shrunk = shrunk;
        out.push(report);
    }
    Ok(out)
}

/// Out-of-fold specific predictions for one `t_r`, keyed by dataset index.
/// Repositories in excluded clusters, or in clusters too small to fit `t_r`,
/// are absent.
pub fn cross_validate_specific(
    data: &[WindowedSeries],
    clusters: &ClusterModel,
    excluded: &BTreeSet<usize>,
    t_r: usize,
    t: usize,
    folds: usize,
    seed: u64,
) -> Result<BTreeMap<usize, (usize, Prediction)>> {
    let members = cluster_members(data, clusters)?;
    let plans = cluster_plans(&members, folds, seed);
    let mut out = BTreeMap::new();
    for (c, (idx, plan)) in members.iter().zip(plans).enumerate() {
        let Some((plan, _)) = plan.filter(|_| !excluded.contains(&c)) else {
            continue;
        };
        if max_feasible_t_r(&plan) < t_r {
            log::warn!("cluster C{} is too small for t_r = {t_r}; no specific predictions", c + 1);
            continue;
        }
        let subset: Vec<WindowedSeries> = idx.iter().map(|&i| data[i].clone()).collect();
        let preds = cross_validate(&subset, t_r, t, &plan, Scope::Cluster(c))?;
        for (&i, p) in idx.iter().zip(preds) {
            out.insert(i, (c, p));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub repo: RepoName,
    pub cluster: usize,
    pub actual: u64,
    pub generic_predicted: f64,
    pub specific_predicted: f64,
    pub pct_diff_generic: f64,
    pub pct_diff_specific: f64,
    /// `|pct_diff_generic| - |pct_diff_specific|`, in percentage points.
    pub improvement_pp: f64,
}

impl ImprovementRow {
    pub fn new(
        repo: RepoName,
        cluster: usize,
        actual: u64,
        generic_predicted: f64,
        specific_predicted: f64,
    ) -> Option<Self> {
        let g = regress::pct_diff(generic_predicted, actual)?;
        let s = regress::pct_diff(specific_predicted, actual)?;
        Some(ImprovementRow {
            repo,
            cluster,
            actual,
            generic_predicted,
            specific_predicted,
            pct_diff_generic: g,
            pct_diff_specific: s,
            improvement_pp: g.abs() - s.abs(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileSummary {
    pub cluster: usize,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Pairs generic and specific predictions per repository.
///
/// `clusters` maps each repository to its cluster. Repositories whose actual
/// value is 0 have no percentage error and are left out.
pub fn improvement(
    generic: &[Prediction],
    specific: &[Prediction],
    clusters: &HashMap<RepoName, usize>,
) -> Result<(Vec<ImprovementRow>, Vec<QuartileSummary>)> {
    if generic.len() != specific.len() {
        return Err(EvalError::Mismatch(format!(
            "{} generic vs {} specific predictions",
            generic.len(),
            specific.len()
        )));
    }
    let spec: HashMap<&RepoName, &Prediction> = specific.iter().map(|p| (&p.repo, p)).collect();
    let mut rows = Vec::with_capacity(generic.len());
    for g in generic {
        let s = spec
            .get(&g.repo)
            .ok_or_else(|| EvalError::Mismatch(format!("{} has no specific prediction", g.repo)))?;
        if s.actual != g.actual {
            return Err(EvalError::Mismatch(format!(
                "{}: actual {} vs {}",
                g.repo, g.actual, s.actual
            )));
        }
        let cluster = *clusters
            .get(&g.repo)
            .ok_or_else(|| EvalError::Unclustered(g.repo.clone()))?;
        if let Some(r) = ImprovementRow::new(g.repo.clone(), cluster, g.actual, g.predicted, s.predicted) {
            rows.push(r);
        }
    }
    let summary = summarize(&rows);
    Ok((rows, summary))
}

pub fn summarize(rows: &[ImprovementRow]) -> Vec<QuartileSummary> {
    let mut by_cluster: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_cluster.entry(r.cluster).or_default().push(r.improvement_pp);
    }
    by_cluster
        .into_iter()
        .map(|(cluster, mut v)| {
            v.sort_by(f64::total_cmp);
            QuartileSummary {
                cluster,
                n: v.len(),
                min: v[0],
                q1: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q3: quantile(&v, 0.75),
                max: v[v.len() - 1],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fold_examples() {
        let p = kfold_split(10, 10, 1).unwrap();
        assert!(p.folds.iter().all(|f| f.len() == 1));

        let p = kfold_split(23, 10, 5).unwrap();
        let sizes: Vec<usize> = p.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        let mut all: Vec<usize> = p.folds.concat();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());

        assert_eq!(kfold_split(23, 10, 5).unwrap(), p);
        assert_ne!(kfold_split(23, 10, 6).unwrap(), p);
        assert_eq!(kfold_split(3, 10, 0), Err(EvalError::TooFewItems { n: 3, k: 10 }));
    }

    fn linear_data(n: usize) -> Vec<WindowedSeries> {
        // gained(w) = rate * w exactly
        (1..=n)
            .map(|i| WindowedSeries {
                repo: RepoName::parse(&format!("o/r{i}")).unwrap(),
                base: 100,
                gained: (1..=12).map(|w| (i as u64 + 3) * w).collect(),
            })
            .collect()
    }

    #[test]
    fn perfect_model_has_zero_error() {
        let data = linear_data(30);
        let plan = kfold_split(30, 10, 9).unwrap();
        let rep = evaluate_sweep(&data, &[1, 3, 6], 12, &plan).unwrap();
        assert_eq!(rep.rows.len(), 3);
        for r in &rep.rows {
            assert!(r.mrse < 1e-16, "{r:?}");
            assert_eq!(r.n, 30);
        }
    }

    #[test]
    fn multi_target_grid() {
        assert_eq!(fraction_to_t_r(0.5, 52), 26);
        assert_eq!(fraction_to_t_r(0.36, 104), 37);
        assert_eq!(fraction_to_t_r(0.01, 26), 1);
        let data = linear_data(20);
        let plan = kfold_split(20, 10, 0).unwrap();
        let reps = evaluate_multi_target(&data, &[0.5, 1.0], &[6, 12], &plan).unwrap();
        assert_eq!(reps.len(), 2);
        assert_eq!(reps[0].rows.iter().map(|r| r.t_r).collect::<Vec<_>>(), [3, 6]);
        // fraction 1: the target is itself a predictor
        assert!(reps[1].rows[1].mrse < 1e-20);
        assert!(matches!(
            evaluate_multi_target(&data, &[0.5], &[104], &plan),
            Err(EvalError::WindowTooSmall { t: 104, window: 12 })
        ));
    }

    #[test]
    fn improvement_rows() {
        let repo = RepoName::parse("jquery/jquery").unwrap();
        let r = ImprovementRow::new(repo.clone(), 0, 6160, 5369.0, 5578.0).unwrap();
        assert_relative_eq!(r.pct_diff_generic, -12.840_909, epsilon = 1e-6);
        assert_relative_eq!(r.improvement_pp, 3.392_857, epsilon = 1e-6);
        let same = ImprovementRow::new(repo, 0, 10, 12.0, 12.0).unwrap();
        assert_eq!(same.improvement_pp, 0.0);
    }

    #[test]
    fn improvement_requires_matching_sets() {
        let p = |name: &str, pred: f64| Prediction::new(RepoName::parse(name).unwrap(), pred, 10);
        let clusters: HashMap<_, _> = [(RepoName::parse("o/a").unwrap(), 0)].into();
        assert!(matches!(
            improvement(&[p("o/a", 9.0)], &[p("o/b", 9.0)], &clusters),
            Err(EvalError::Mismatch(_))
        ));
        let (rows, summary) = improvement(&[p("o/a", 8.0)], &[p("o/a", 11.0)], &clusters).unwrap();
        assert_relative_eq!(rows[0].improvement_pp, 10.0, epsilon = 1e-12);
        assert_eq!(summary[0].n, 1);
        assert_relative_eq!(summary[0].median, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }
}
