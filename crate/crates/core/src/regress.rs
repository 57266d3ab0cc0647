//! Multiple linear regression from the first `t_r` weeks of a window to the
//! stars gained by week `t`, and the relative squared error measures.
//!
//! Predictors and target are cumulative stars gained since the window
//! opened: `y = b0 + b1 * gained(1) + ... + b_tr * gained(t_r)` estimates
//! `gained(t)`.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RepoName;
use crate::linalg;
use crate::timeseries::WindowedSeries;

pub const MODEL_FORMAT: &str = "stargaze-regression/1";

#[derive(Error, Debug, Clone, PartialEq)]
pub enum RegressError {
    #[error("need at least {needed} training series for t_r = {t_r}, have {have}")]
    InsufficientData { needed: usize, have: usize, t_r: usize },
    #[error("invalid weeks: t_r = {t_r}, t = {t}, window = {window}")]
    InvalidWeeks { t_r: usize, t: usize, window: usize },
    #[error("least-squares solver failed")]
    NumericalFailure,
    #[error("model expects {expected} predictor weeks, got {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("relative error undefined for an actual value of 0")]
    ZeroActual,
    #[error("no predictions to aggregate")]
    Empty,
}

pub type Result<T> = std::result::Result<T, RegressError>;

/// Which repositories a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Generic,
    /// Zero-based cluster index.
    Cluster(usize),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Generic => f.write_str("generic"),
            Scope::Cluster(c) => write!(f, "C{}", c + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub scope: Scope,
    pub t_r: usize,
    pub t: usize,
    /// Intercept first, then one coefficient per predictor week.
    pub coeffs: Vec<f64>,
    pub trained_on: usize,
    /// Set when the design matrix was rank deficient and the minimum-norm
    /// solution was taken.
    pub collinear: bool,
    pub rank: usize,
}

fn check_weeks(t_r: usize, t: usize, window: usize) -> Result<()> {
    if t_r == 0 || t_r > t || t > window {
        return Err(RegressError::InvalidWeeks { t_r, t, window });
    }
    Ok(())
}

/// Least-squares fit over explicit rows: each `x` row holds `t_r` predictor
/// values and `y` the matching targets.
pub fn fit_rows(x: &[Vec<f64>], y: &[f64], t_r: usize) -> Result<(Vec<f64>, usize)> {
    let n = x.len();
    if n < t_r + 2 || y.len() != n {
        return Err(RegressError::InsufficientData {
            needed: t_r + 2,
            have: n.min(y.len()),
            t_r,
        });
    }
    let cols = t_r + 1;
    let mut a = Vec::with_capacity(n * cols);
    for row in x {
        if row.len() != t_r {
            return Err(RegressError::ArityMismatch {
                expected: t_r,
                found: row.len(),
            });
        }
        a.push(1.0);
        a.extend_from_slice(row);
    }
    let ls = linalg::lstsq_min_norm(n, cols, &a, y).ok_or(RegressError::NumericalFailure)?;
    if ls.coeffs.iter().any(|c| !c.is_finite()) {
        return Err(RegressError::NumericalFailure);
    }
    Ok((ls.coeffs, ls.rank))
}

fn predictors(s: &WindowedSeries, t_r: usize) -> Vec<f64> {
    s.gained[..t_r].iter().map(|&v| v as f64).collect()
}

/// Fits `gained(t)` on `gained(1..=t_r)` over the training series.
pub fn fit(train: &[&WindowedSeries], t_r: usize, t: usize, scope: Scope) -> Result<RegressionModel> {
    let window = train.iter().map(|s| s.window()).min().unwrap_or(0);
    if !train.is_empty() {
        check_weeks(t_r, t, window)?;
    }
    let x: Vec<Vec<f64>> = train.iter().map(|s| predictors(s, t_r)).collect();
    let y: Vec<f64> = train.iter().map(|s| s.gained_at(t) as f64).collect();
    let (coeffs, rank) = fit_rows(&x, &y, t_r)?;
    Ok(RegressionModel {
        scope,
        t_r,
        t,
        collinear: rank < coeffs.len(),
        coeffs,
        trained_on: train.len(),
        rank,
    })
}

impl RegressionModel {
    /// `b0 + sum_i b_i * prefix[i - 1]`. Negative values are returned as is.
    pub fn predict(&self, prefix: &[f64]) -> Result<f64> {
        if prefix.len() != self.t_r {
            return Err(RegressError::ArityMismatch {
                expected: self.t_r,
                found: prefix.len(),
            });
        }
        Ok(self.coeffs[0]
            + self.coeffs[1..]
                .iter()
                .zip(prefix)
                .map(|(b, x)| b * x)
                .sum::<f64>())
    }

    pub fn predict_series(&self, s: &WindowedSeries) -> Result<Prediction> {
        if s.window() < self.t {
            return Err(RegressError::InvalidWeeks {
                t_r: self.t_r,
                t: self.t,
                window: s.window(),
            });
        }
        let predicted = self.predict(&predictors(s, self.t_r))?;
        Ok(Prediction::new(s.repo.clone(), predicted, s.gained_at(self.t)))
    }

    pub fn write_json<W: Write>(models: &[RegressionModel], w: W) -> serde_json::Result<()> {
        #[derive(Serialize)]
        struct Doc<'a> {
            format: &'a str,
            models: &'a [RegressionModel],
        }
        serde_json::to_writer_pretty(
            w,
            &Doc {
                format: MODEL_FORMAT,
                models,
            },
        )
    }

    pub fn read_json<R: Read>(r: R) -> std::result::Result<Vec<RegressionModel>, String> {
        #[derive(Deserialize)]
        struct Doc {
            format: String,
            models: Vec<RegressionModel>,
        }
        let doc: Doc = serde_json::from_reader(r).map_err(|e| e.to_string())?;
        if doc.format != MODEL_FORMAT {
            return Err(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                doc.format
            ));
        }
        if let Some(m) = doc.models.iter().find(|m| m.coeffs.len() != m.t_r + 1) {
            return Err(format!("{} model has {} coefficients for t_r = {}", m.scope, m.coeffs.len(), m.t_r));
        }
        Ok(doc.models)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub repo: RepoName,
    pub predicted: f64,
    pub actual: u64,
    /// `None` when `actual` is 0.
    pub rse: Option<f64>,
}

impl Prediction {
    pub fn new(repo: RepoName, predicted: f64, actual: u64) -> Self {
        Prediction {
            repo,
            predicted,
            actual,
            rse: rse(predicted, actual).ok(),
        }
    }

    /// Signed percentage error, `100 * (predicted - actual) / actual`.
    pub fn pct_diff(&self) -> Option<f64> {
        pct_diff(self.predicted, self.actual)
    }
}

/// Relative squared error `(predicted / actual - 1)^2`.
pub fn rse(predicted: f64, actual: u64) -> Result<f64> {
    if actual == 0 {
        return Err(RegressError::ZeroActual);
    }
    let r = predicted / actual as f64 - 1.0;
    Ok(r * r)
}

pub fn pct_diff(predicted: f64, actual: u64) -> Option<f64> {
    (actual > 0).then(|| 100.0 * (predicted - actual as f64) / actual as f64)
}

/// Mean relative squared error with a normal-approximation 95% interval
/// half-width, `1.96 * s / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

impl ErrorSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(RegressError::Empty);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ci95 = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Ok(ErrorSummary { mean, ci95, n })
    }
}

/// mRSE over the predictions with a defined RSE.
pub fn mrse(predictions: &[Prediction]) -> Result<ErrorSummary> {
    let values: Vec<f64> = predictions.iter().filter_map(|p| p.rse).collect();
    ErrorSummary::from_values(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn series(name: &str, gained: Vec<u64>) -> WindowedSeries {
        WindowedSeries {
            repo: RepoName::parse(name).unwrap(),
            base: 0,
            gained,
        }
    }

    #[test]
    fn recovers_exact_line() {
        let train: Vec<_> = (1..=8)
            .map(|x| series(&format!("o/r{x}"), vec![x, 10 + 2 * x]))
            .collect();
        let refs: Vec<_> = train.iter().collect();
        let m = fit(&refs, 1, 2, Scope::Generic).unwrap();
        assert_relative_eq!(m.coeffs[0], 10.0, max_relative = 1e-8);
        assert_relative_eq!(m.coeffs[1], 2.0, max_relative = 1e-8);
        assert!(!m.collinear);
        for s in &train {
            let p = m.predict_series(s).unwrap();
            assert_relative_eq!(p.predicted, p.actual as f64, max_relative = 1e-8);
        }
    }

    #[test]
    fn constant_target() {
        let train: Vec<_> = (1..=6)
            .map(|x| series(&format!("o/r{x}"), vec![x * 3, 7]))
            .collect();
        let refs: Vec<_> = train.iter().collect();
        // target must exceed predictors for real series, but the fit itself
        // does not care
        let m = fit(&refs, 1, 2, Scope::Generic).unwrap();
        assert_relative_eq!(m.coeffs[0], 7.0, max_relative = 1e-9);
        assert!(m.coeffs[1].abs() < 1e-9);
    }

    #[test]
    fn duplicate_predictors_take_min_norm() {
        // 5 rows, predictors x1 == x2, y = 1 + 4 x1
        let x: Vec<Vec<f64>> = [1.0, 2.0, 4.0, 7.0, 8.0].iter().map(|v| vec![*v, *v]).collect();
        let y: Vec<f64> = x.iter().map(|r| 1.0 + 4.0 * r[0]).collect();
        let (c, rank) = fit_rows(&x, &y, 2).unwrap();
        assert_eq!(rank, 2);
        assert_relative_eq!(c[0], 1.0, max_relative = 1e-9);
        assert_relative_eq!(c[1], 2.0, max_relative = 1e-9);
        assert_relative_eq!(c[2], 2.0, max_relative = 1e-9);
    }

    #[test]
    fn errors() {
        let train = [series("o/a", vec![1, 2]), series("o/b", vec![2, 4])];
        let refs: Vec<_> = train.iter().collect();
        assert!(matches!(
            fit(&refs, 1, 2, Scope::Generic),
            Err(RegressError::InsufficientData { needed: 3, have: 2, .. })
        ));
        assert!(matches!(
            fit(&refs, 2, 1, Scope::Generic),
            Err(RegressError::InvalidWeeks { .. })
        ));
        let m = RegressionModel {
            scope: Scope::Generic,
            t_r: 1,
            t: 2,
            coeffs: vec![10.0, 2.0],
            trained_on: 0,
            collinear: false,
            rank: 2,
        };
        assert_eq!(m.predict(&[5.0]).unwrap(), 20.0);
        assert_eq!(m.predict(&[0.0]).unwrap(), 10.0);
        assert!(matches!(m.predict(&[]), Err(RegressError::ArityMismatch { .. })));
    }

    #[test]
    fn rse_examples() {
        assert_eq!(rse(10.0, 10).unwrap(), 0.0);
        assert_eq!(rse(20.0, 10).unwrap(), 1.0);
        assert_relative_eq!(rse(5369.0, 6160).unwrap(), 0.016_488_894_628_099, epsilon = 1e-12);
        assert_eq!(rse(1.0, 0), Err(RegressError::ZeroActual));
    }

    #[test]
    fn mrse_examples() {
        let p = |r: f64| Prediction {
            repo: RepoName::parse("o/r").unwrap(),
            predicted: 0.0,
            actual: 1,
            rse: Some(r),
        };
        let one = mrse(&[p(0.4)]).unwrap();
        assert_eq!((one.mean, one.ci95), (0.4, 0.0));
        assert_eq!(mrse(&[p(0.0), p(1.0)]).unwrap().mean, 0.5);
        assert_eq!(mrse(&[]), Err(RegressError::Empty));
    }

    proptest! {
        #[test]
        fn rse_is_scale_invariant(p in 0.0f64..1e5, a in 1u64..100_000, c in 1u64..50) {
            let lhs = rse(p * c as f64, a * c).unwrap();
            let rhs = rse(p, a).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }

        #[test]
        fn mrse_of_concatenation_is_weighted_mean(
            a in proptest::collection::vec(0.0f64..10.0, 1..30),
            b in proptest::collection::vec(0.0f64..10.0, 1..30),
        ) {
            let ma = ErrorSummary::from_values(&a).unwrap();
            let mb = ErrorSummary::from_values(&b).unwrap();
            let all: Vec<f64> = a.iter().chain(&b).copied().collect();
            let m = ErrorSummary::from_values(&all).unwrap();
            let weighted = (ma.mean * a.len() as f64 + mb.mean * b.len() as f64) / all.len() as f64;
            prop_assert!((m.mean - weighted).abs() < 1e-12);
        }
    }
}
