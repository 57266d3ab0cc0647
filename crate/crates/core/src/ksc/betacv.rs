//! The beta_CV heuristic for choosing the number of clusters.
//!
//! `beta_CV(k) = CV(intra) / CV(inter)`, where intra and inter are the
//! pairwise distances within and across the clusters of a k-clustering and
//! `CV = std / mean` (population standard deviation). A multiset with no
//! spread has CV 0, even when all its values are 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{align, ksc_cluster, norm, Clustering, KscError, KscParams, Result};

/// Symmetrised KSC distances between all pairs, stored as the strict upper
/// triangle in row order.
#[derive(Debug, Clone)]
pub struct PairwiseDistances {
    n: usize,
    q_max: usize,
    values: Vec<f64>,
}

impl PairwiseDistances {
    /// `(d(x, y) + d(y, x)) / 2` for every pair; the KSC distance itself is
    /// not symmetric once shifts are allowed.
    pub fn compute(vectors: &[Vec<f64>], q_max: usize) -> Result<Self> {
        let n = vectors.len();
        let norms: Vec<f64> = vectors.iter().map(|v| norm(v)).collect();
        if let Some(index) = norms.iter().position(|&x| x == 0.0) {
            return Err(KscError::ZeroVector { index });
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != vectors[0].len()) {
            return Err(KscError::LengthMismatch {
                expected: vectors[0].len(),
                found: v.len(),
            });
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                ((i + 1)..n)
                    .map(|j| {
                        let a = align(&vectors[i], norms[i], &vectors[j], q_max).distance;
                        let b = align(&vectors[j], norms[j], &vectors[i], q_max).distance;
                        0.5 * (a + b)
                    })
                    .collect()
            })
            .collect();
        Ok(PairwiseDistances {
            n,
            q_max,
            values: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn q_max(&self) -> usize {
        self.q_max
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        assert!(i != j && j < self.n);
        // rows before i hold (n-1) + (n-2) + ... + (n-i) entries
        let offset = i * (2 * self.n - i - 1) / 2;
        self.values[offset + (j - i - 1)]
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| ((i + 1)..self.n).map(move |j| (i, j, self.get(i, j))))
    }

    /// beta_CV of one partition of the vectors.
    pub fn beta_cv(&self, assignment: &[usize]) -> Result<f64> {
        let k = assignment.iter().max().map_or(0, |m| m + 1);
        if assignment.len() != self.n {
            return Err(KscError::LengthMismatch {
                expected: self.n,
                found: assignment.len(),
            });
        }
        let mut intra = Moments::default();
        let mut inter = Moments::default();
        for (i, j, d) in self.pairs() {
            if assignment[i] == assignment[j] {
                intra.push(d);
            } else {
                inter.push(d);
            }
        }
        let intra_mean = intra.mean();
        let inter_mean = inter.mean();
        for (i, j, d) in self.pairs() {
            if assignment[i] == assignment[j] {
                intra.push_dev(d - intra_mean);
            } else {
                inter.push_dev(d - inter_mean);
            }
        }
        let cv_intra = intra.cv().ok_or_else(|| KscError::UndefinedCv {
            k,
            reason: "no intracluster pairs".into(),
        })?;
        let cv_inter = inter.cv().ok_or_else(|| KscError::UndefinedCv {
            k,
            reason: "no intercluster pairs".into(),
        })?;
        if cv_inter == 0.0 {
            return Err(KscError::UndefinedCv {
                k,
                reason: "intercluster distances have no spread".into(),
            });
        }
        Ok(cv_intra / cv_inter)
    }
}

#[derive(Default)]
struct Moments {
    n: usize,
    sum: f64,
    sq_dev: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
    }

    fn push_dev(&mut self, dev: f64) {
        self.sq_dev += dev * dev;
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    fn cv(&self) -> Option<f64> {
        if self.n == 0 {
            return None;
        }
        let std = (self.sq_dev / self.n as f64).sqrt();
        if std == 0.0 {
            return Some(0.0);
        }
        let mean = self.mean();
        if mean == 0.0 {
            return None;
        }
        Some(std / mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCvCurve {
    /// `(k, beta_cv)` for consecutive k.
    pub entries: Vec<(usize, f64)>,
}

/// beta_CV for each clustering of the same vectors.
pub fn beta_cv(vectors: &[Vec<f64>], models: &[Clustering]) -> Result<BetaCvCurve> {
    let Some(first) = models.first() else {
        return Ok(BetaCvCurve { entries: vec![] });
    };
    let q_max = first.params.q_max;
    if let Some(m) = models.iter().find(|m| m.params.q_max != q_max) {
        return Err(KscError::InvalidParameter(format!(
            "models disagree on q_max ({} vs {q_max})",
            m.params.q_max
        )));
    }
    let pairs = PairwiseDistances::compute(vectors, q_max)?;
    curve_from(&pairs, models)
}

fn curve_from(pairs: &PairwiseDistances, models: &[Clustering]) -> Result<BetaCvCurve> {
    let entries = models
        .iter()
        .map(|m| Ok((m.k(), pairs.beta_cv(&m.assignment)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BetaCvCurve { entries })
}

/// Clusters the vectors for every k in `ks` and evaluates beta_CV, computing
/// the pairwise distances once.
pub fn beta_cv_sweep(
    vectors: &[Vec<f64>],
    ks: std::ops::RangeInclusive<usize>,
    base: &KscParams,
) -> Result<(Vec<Clustering>, BetaCvCurve)> {
    let pairs = PairwiseDistances::compute(vectors, base.q_max)?;
    let models = ks
        .map(|k| {
            let p = KscParams { k, ..base.clone() };
            ksc_cluster(vectors, &p)
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = curve_from(&pairs, &models)?;
    Ok((models, curve))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    /// False when no k met the stability rule and the least unstable one was
    /// returned instead.
    pub stable: bool,
}

/// Smallest k whose next `window` beta_CV values all lie within
/// `tol * beta_cv(k)` of it. Falls back to the k with the smallest maximum
/// relative forward deviation, flagged unstable.
pub fn select_k(curve: &BetaCvCurve, tol: f64, window: usize) -> KSelection {
    let e = &curve.entries;
    let deviation = |i: usize| -> f64 {
        let base = e[i].1;
        e[i + 1..=i + window]
            .iter()
            .map(|(_, b)| (b - base).abs())
            .fold(0.0, f64::max)
    };
    let candidates = e.len().saturating_sub(window);
    if let Some(i) = (0..candidates).find(|&i| deviation(i) <= tol * e[i].1) {
        return KSelection {
            k: e[i].0,
            stable: true,
        };
    }
    let fallback = (0..candidates)
        .min_by(|&a, &b| {
            let ra = deviation(a) / e[a].1.abs().max(f64::MIN_POSITIVE);
            let rb = deviation(b) / e[b].1.abs().max(f64::MIN_POSITIVE);
            ra.total_cmp(&rb)
        })
        .map_or_else(|| e.first().map_or(0, |x| x.0), |i| e[i].0);
    KSelection {
        k: fallback,
        stable: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn curve(vals: &[f64]) -> BetaCvCurve {
        BetaCvCurve {
            entries: vals.iter().enumerate().map(|(i, v)| (i + 2, *v)).collect(),
        }
    }

    #[test]
    fn select_k_examples() {
        assert_eq!(
            select_k(&curve(&[0.4; 6]), 0.1, 3),
            KSelection { k: 2, stable: true }
        );
        let stab = curve(&[1.0, 0.8, 0.6, 0.45, 0.44, 0.46, 0.43, 0.45, 0.44]);
        assert_eq!(select_k(&stab, 0.1, 3), KSelection { k: 5, stable: true });
        let osc = curve(&[1.0, 0.5, 1.0, 0.5, 1.0, 0.5, 1.0]);
        assert!(!select_k(&osc, 0.1, 3).stable);
    }

    #[test]
    fn condensed_indexing() {
        let v: Vec<Vec<f64>> = (1..=5).map(|i| vec![1.0, i as f64]).collect();
        let p = PairwiseDistances::compute(&v, 0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    let a = super::super::ksc_distance(&v[i], &v[j], 0).unwrap().distance;
                    let b = super::super::ksc_distance(&v[j], &v[i], 0).unwrap().distance;
                    assert_relative_eq!(p.get(i, j), 0.5 * (a + b), epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn tight_clusters_have_zero_intra_spread() {
        // three shape groups, identical shapes inside each (up to scale 1)
        let a = vec![1.0, 0.0, 0.0];
        let b = vec![0.0, 1.0, 0.0];
        let c = vec![1.0, 1.0, 1.0];
        let v = vec![a.clone(), a, b.clone(), b, c.clone(), c];
        let p = PairwiseDistances::compute(&v, 0).unwrap();
        assert_eq!(p.beta_cv(&[0, 0, 1, 1, 2, 2]).unwrap(), 0.0);

        // with two identical-shape clusters every inter distance is equal
        let two = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let p2 = PairwiseDistances::compute(&two, 0).unwrap();
        assert!(matches!(p2.beta_cv(&[0, 0, 1, 1]), Err(KscError::UndefinedCv { .. })));
    }

    #[test]
    fn hand_evaluated_six_points() {
        // at q_max = 0 the distance is sin(angle); points on the unit circle
        // at the angles below give intra/inter distances |sin(a_i - a_j)|
        let deg = [0.0f64, 10.0, 25.0, 80.0, 90.0, 100.0];
        let v: Vec<Vec<f64>> = deg
            .iter()
            .map(|d| vec![d.to_radians().cos(), d.to_radians().sin()])
            .collect();
        let assign = [0, 0, 0, 1, 1, 1];
        let s = |a: f64, b: f64| (a - b).to_radians().sin().abs();
        let intra = [
            s(0.0, 10.0),
            s(0.0, 25.0),
            s(10.0, 25.0),
            s(80.0, 90.0),
            s(80.0, 100.0),
            s(90.0, 100.0),
        ];
        let mut inter = Vec::new();
        for a in &deg[..3] {
            for b in &deg[3..] {
                inter.push(s(*a, *b));
            }
        }
        let cv = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64;
            var.sqrt() / m
        };
        let expected = cv(&intra) / cv(&inter);
        let p = PairwiseDistances::compute(&v, 0).unwrap();
        assert_relative_eq!(p.beta_cv(&assign).unwrap(), expected, epsilon = 1e-12);
        // frozen value of the hand evaluation above
        assert_relative_eq!(expected, 6.403_736_368_575_16, epsilon = 1e-10);
    }
}
