//! Popularity rankings and Spearman rank correlation.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::ingest::RepoName;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum RankingError {
    #[error("rankings cover different repositories: {0}")]
    SetMismatch(String),
    #[error("ranks are constant; correlation undefined")]
    DegenerateVariance,
    #[error("k = {k} exceeds the {available} ranked repositories")]
    KTooLarge { k: usize, available: usize },
}

pub type Result<T> = std::result::Result<T, RankingError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub repo: RepoName,
    pub score: f64,
    pub rank: usize,
}

/// Repositories in descending score order with ordinal ranks from 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<RankEntry>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index(&self) -> HashMap<&RepoName, &RankEntry> {
        self.entries.iter().map(|e| (&e.repo, e)).collect()
    }

    pub fn rank_of(&self, repo: &RepoName) -> Option<usize> {
        self.entries.iter().find(|e| &e.repo == repo).map(|e| e.rank)
    }

    /// The entries for `repos`, keeping this ranking's order and scores.
    pub fn restrict(&self, repos: &BTreeSet<&RepoName>) -> Ranking {
        Ranking {
            entries: self
                .entries
                .iter()
                .filter(|e| repos.contains(&e.repo))
                .cloned()
                .collect(),
        }
    }
}

/// Ranks by descending score; equal scores are ordered by repository name.
pub fn rank_by_stars<I>(scores: I) -> Ranking
where
    I: IntoIterator<Item = (RepoName, f64)>,
{
    let mut v: Vec<(RepoName, f64)> = scores.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ranking {
        entries: v
            .into_iter()
            .enumerate()
            .map(|(i, (repo, score))| RankEntry {
                repo,
                score,
                rank: i + 1,
            })
            .collect(),
    }
}

/// Average (fractional) ranks, 1-based, ascending in value.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = avg;
        }
        i = j;
    }
    ranks
}

/// Sum of (t^3 - t) over tie groups.
fn tie_term(ranks: &[f64]) -> f64 {
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        total += t * t * t - t;
        i = j;
    }
    total
}

/// Spearman's rho of two paired samples with average ranks for ties.
pub fn spearman_values(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(RankingError::SetMismatch(format!(
            "{} vs {} values",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let base = n * n * n - n;
    let sx = (base - tie_term(&rx)) / 12.0;
    let sy = (base - tie_term(&ry)) / 12.0;
    if sx <= 0.0 || sy <= 0.0 {
        return Err(RankingError::DegenerateVariance);
    }
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(((sx + sy - d2) / (2.0 * (sx * sy).sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho between two rankings of the same repositories, computed
/// from their scores.
pub fn spearman(a: &Ranking, b: &Ranking) -> Result<f64> {
    if a.len() != b.len() {
        return Err(RankingError::SetMismatch(format!(
            "{} vs {} entries",
            a.len(),
            b.len()
        )));
    }
    let bi = b.index();
    let mut x = Vec::with_capacity(a.len());
    let mut y = Vec::with_capacity(a.len());
    for e in &a.entries {
        let other = bi
            .get(&e.repo)
            .ok_or_else(|| RankingError::SetMismatch(format!("{} missing", e.repo)))?;
        x.push(e.score);
        y.push(other.score);
    }
    spearman_values(&x, &y)
}

/// Two-sided p-value of rho under the t approximation, as a short note.
pub fn p_note(rho: f64, n: usize) -> String {
    if n < 3 {
        return "n/a".into();
    }
    let df = (n - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    if p < 0.001 {
        "p < 0.001".into()
    } else {
        format!("p = {p:.3}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub repo: RepoName,
    pub real_rank: usize,
    /// None for newcomers.
    pub predicted_rank: Option<usize>,
    /// `predicted_rank - real_rank`; negative when the prediction ranks the
    /// repository higher than it really is.
    pub diff: Option<i64>,
}

impl RankRow {
    pub fn new(repo: RepoName, real_rank: usize, predicted_rank: Option<usize>) -> Self {
        RankRow {
            repo,
            real_rank,
            predicted_rank,
            diff: predicted_rank.map(|p| rank_diff(p, real_rank)),
        }
    }

    pub fn is_newcomer(&self) -> bool {
        self.predicted_rank.is_none()
    }
}

pub fn rank_diff(predicted: usize, real: usize) -> i64 {
    predicted as i64 - real as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankComparison {
    /// One row per repository of the real ranking, in real order.
    pub rows: Vec<RankRow>,
    pub rho: f64,
    pub p_note: String,
    pub newcomers: usize,
    pub correlated: usize,
    pub overestimated: usize,
    pub underestimated: usize,
    pub exact: usize,
}

/// Compares a predicted ranking against the real one. Repositories ranked
/// only in `real` are newcomers: they keep their real rank in the rows but
/// take no part in the correlation.
pub fn compare_rankings(predicted: &Ranking, real: &Ranking) -> Result<RankComparison> {
    let pi = predicted.index();
    let real_repos: BTreeSet<&RepoName> = real.entries.iter().map(|e| &e.repo).collect();
    if let Some(e) = predicted.entries.iter().find(|e| !real_repos.contains(&e.repo)) {
        return Err(RankingError::SetMismatch(format!(
            "{} is predicted but not in the real ranking",
            e.repo
        )));
    }
    let rows: Vec<RankRow> = real
        .entries
        .iter()
        .map(|e| RankRow::new(e.repo.clone(), e.rank, pi.get(&e.repo).map(|p| p.rank)))
        .collect();
    let common: BTreeSet<&RepoName> = predicted.entries.iter().map(|e| &e.repo).collect();
    let rho = spearman(&predicted.restrict(&common), &real.restrict(&common))?;
    let diffs = rows.iter().filter_map(|r| r.diff);
    Ok(RankComparison {
        rho,
        p_note: p_note(rho, common.len()),
        newcomers: rows.iter().filter(|r| r.is_newcomer()).count(),
        correlated: common.len(),
        overestimated: diffs.clone().filter(|&d| d < 0).count(),
        underestimated: diffs.clone().filter(|&d| d > 0).count(),
        exact: diffs.filter(|&d| d == 0).count(),
        rows,
    })
}

/// Rho over the top-k repositories of the real ranking, newcomers removed.
pub fn topk_correlation(predicted: &Ranking, real: &Ranking, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    let pi = predicted.index();
    let common: Vec<&RankEntry> = real
        .entries
        .iter()
        .filter(|e| pi.contains_key(&e.repo))
        .collect();
    let ks: BTreeSet<usize> = ks.iter().copied().collect();
    ks.into_iter()
        .map(|k| {
            if k > common.len() {
                return Err(RankingError::KTooLarge {
                    k,
                    available: common.len(),
                });
            }
            let top = &common[..k];
            let x: Vec<f64> = top.iter().map(|e| pi[&e.repo].score).collect();
            let y: Vec<f64> = top.iter().map(|e| e.score).collect();
            Ok((k, spearman_values(&x, &y)?))
        })
        .collect()
}

/// One line of the real-versus-predicted rank table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTableRow {
    pub repo: RepoName,
    pub real: usize,
    pub generic: Option<usize>,
    pub specific: Option<usize>,
    pub diff_generic: Option<i64>,
    pub diff_specific: Option<i64>,
}

/// Joins generic and specific comparisons on the real ranking.
pub fn rank_table(generic: &RankComparison, specific: &RankComparison) -> Result<Vec<RankTableRow>> {
    if generic.rows.len() != specific.rows.len() {
        return Err(RankingError::SetMismatch(
            "comparisons use different real rankings".into(),
        ));
    }
    generic
        .rows
        .iter()
        .zip(&specific.rows)
        .map(|(g, s)| {
            if g.repo != s.repo || g.real_rank != s.real_rank {
                return Err(RankingError::SetMismatch(format!("{} vs {}", g.repo, s.repo)));
            }
            Ok(RankTableRow {
                repo: g.repo.clone(),
                real: g.real_rank,
                generic: g.predicted_rank,
                specific: s.predicted_rank,
                diff_generic: g.diff,
                diff_specific: s.diff,
            })
        })
        .collect()
}

/// The first and last `n` rows.
pub fn head_tail(rows: &[RankTableRow], n: usize) -> Vec<RankTableRow> {
    if rows.len() <= 2 * n {
        return rows.to_vec();
    }
    rows[..n].iter().chain(&rows[rows.len() - n..]).cloned().collect()
}

pub const NEWCOMER_MARK: &str = "---";

pub fn write_rank_table<W: Write>(rows: &[RankTableRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "repo",
        "real",
        "generic",
        "specific",
        "diff_generic",
        "diff_specific",
    ])?;
    let cell = |v: Option<String>| v.unwrap_or_else(|| NEWCOMER_MARK.to_string());
    for r in rows {
        out.write_record([
            r.repo.to_string(),
            r.real.to_string(),
            cell(r.generic.map(|v| v.to_string())),
            cell(r.specific.map(|v| v.to_string())),
            cell(r.diff_generic.map(|v| v.to_string())),
            cell(r.diff_specific.map(|v| v.to_string())),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn r(s: &str) -> RepoName {
        RepoName::parse(s).unwrap()
    }

    fn ranking(pairs: &[(&str, f64)]) -> Ranking {
        rank_by_stars(pairs.iter().map(|(n, s)| (r(n), *s)))
    }

    #[test]
    fn rank_examples() {
        let k = ranking(&[("o/a", 3.0), ("o/b", 1.0), ("o/c", 2.0)]);
        let order: Vec<_> = k.entries.iter().map(|e| (e.repo.to_string(), e.rank)).collect();
        assert_eq!(order, [("o/a".into(), 1), ("o/c".into(), 2), ("o/b".into(), 3)]);

        let k = ranking(&[("o/c", 5.0), ("o/a", 5.0), ("o/b", 5.0)]);
        let names: Vec<_> = k.entries.iter().map(|e| e.repo.to_string()).collect();
        assert_eq!(names, ["o/a", "o/b", "o/c"]);
    }

    #[test]
    fn average_rank_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), [2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_examples() {
        let a = ranking(&[("o/a", 5.0), ("o/b", 4.0), ("o/c", 3.0), ("o/d", 2.0), ("o/e", 1.0)]);
        assert_eq!(spearman(&a, &a).unwrap(), 1.0);
        let rev = ranking(&[("o/a", 1.0), ("o/b", 2.0), ("o/c", 3.0), ("o/d", 4.0), ("o/e", 5.0)]);
        assert_eq!(spearman(&a, &rev).unwrap(), -1.0);
        // one adjacent swap: 1 - 6*2/(5*24)
        let swap = ranking(&[("o/a", 5.0), ("o/b", 3.0), ("o/c", 4.0), ("o/d", 2.0), ("o/e", 1.0)]);
        assert_relative_eq!(spearman(&a, &swap).unwrap(), 0.9, epsilon = 1e-15);

        let flat = ranking(&[("o/a", 1.0), ("o/b", 1.0), ("o/c", 1.0), ("o/d", 1.0), ("o/e", 1.0)]);
        assert_eq!(spearman(&a, &flat), Err(RankingError::DegenerateVariance));
        let other = ranking(&[("o/a", 1.0), ("o/b", 2.0), ("o/c", 3.0), ("o/d", 4.0), ("o/z", 5.0)]);
        assert!(matches!(spearman(&a, &other), Err(RankingError::SetMismatch(_))));
    }

    #[test]
    fn ties_match_scipy() {
        // scipy.stats.spearmanr([1,2,2,3,4,4,4,5], [2,1,3,3,5,4,6,6])
        let x = [1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 4.0, 5.0];
        let y = [2.0, 1.0, 3.0, 3.0, 5.0, 4.0, 6.0, 6.0];
        assert_relative_eq!(spearman_values(&x, &y).unwrap(), 0.900_777_510_540_147_7, epsilon = 1e-12);
    }

    #[test]
    fn comparison_with_newcomers() {
        let real = ranking(&[("o/a", 50.0), ("o/new", 40.0), ("o/b", 30.0), ("o/c", 20.0), ("o/d", 10.0)]);
        let pred = ranking(&[("o/a", 9.0), ("o/c", 8.0), ("o/b", 7.0), ("o/d", 6.0)]);
        let cmp = compare_rankings(&pred, &real).unwrap();
        assert_eq!(cmp.newcomers, 1);
        assert_eq!(cmp.newcomers + cmp.correlated, real.len());
        let diffs: Vec<_> = cmp.rows.iter().map(|r| r.diff).collect();
        assert_eq!(diffs, [Some(0), None, Some(0), Some(-2), Some(-1)]);
        assert_eq!((cmp.overestimated, cmp.underestimated, cmp.exact), (2, 0, 2));
        assert_relative_eq!(cmp.rho, 0.8, epsilon = 1e-15);

        let perfect = compare_rankings(&real, &real).unwrap();
        assert_eq!(perfect.rho, 1.0);
        assert!(perfect.rows.iter().all(|r| r.diff == Some(0)));
        assert_eq!(perfect.p_note, "p < 0.001");
    }

    #[test]
    fn topk() {
        let real = ranking(&[("o/a", 50.0), ("o/new", 40.0), ("o/b", 30.0), ("o/c", 20.0), ("o/d", 10.0)]);
        let pred = ranking(&[("o/a", 9.0), ("o/c", 8.0), ("o/b", 7.0), ("o/d", 6.0)]);
        let cmp = compare_rankings(&pred, &real).unwrap();
        let got = topk_correlation(&pred, &real, &[4, 2]).unwrap();
        assert_eq!(got[0], (2, 1.0));
        assert_eq!(got[1], (4, cmp.rho));
        assert_eq!(
            topk_correlation(&pred, &real, &[5]),
            Err(RankingError::KTooLarge { k: 5, available: 4 })
        );
    }

    #[test]
    fn table_csv_marks_newcomers() {
        let real = ranking(&[("o/a", 50.0), ("o/new", 40.0), ("o/b", 30.0)]);
        let g = ranking(&[("o/a", 1.0), ("o/b", 2.0)]);
        let s = ranking(&[("o/a", 2.0), ("o/b", 1.0)]);
        let rows = rank_table(
            &compare_rankings(&g, &real).unwrap(),
            &compare_rankings(&s, &real).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_rank_table(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "repo,real,generic,specific,diff_generic,diff_specific\n\
             o/a,1,2,1,1,0\n\
             o/new,2,---,---,---,---\n\
             o/b,3,1,2,-2,-1\n"
        );
    }

    #[test]
    fn p_notes() {
        assert_eq!(p_note(0.5, 2), "n/a");
        // t = 0.5 * sqrt(8 / 0.75), df = 8
        assert_eq!(p_note(0.5, 10), "p = 0.141");
        assert_eq!(p_note(0.9534, 4248), "p < 0.001");
    }
}
