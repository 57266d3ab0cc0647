//! K-Spectral Centroid clustering of growth shapes.
//!
//! The dissimilarity between two series is
//!
//! ```text
//! d(x, y) = min over q in [-q_max, q_max], a in R of ||x - a * shift(y, q)|| / ||x||
//! ```
//!
//! which ignores both the scale of `y` and small delays between the series.
//! The centroid of a cluster is the unit vector minimising the summed squared
//! distance to its (aligned) members: the eigenvector belonging to the
//! smallest eigenvalue of `M = sum_i (I - x_i x_i^T / ||x_i||^2)`.

mod betacv;
mod model;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg;

pub use betacv::{beta_cv, beta_cv_sweep, select_k, BetaCvCurve, KSelection, PairwiseDistances};
pub use model::{cluster_dataset, ClusterAssignment, ClusterModel, CLUSTER_MODEL_FORMAT};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum KscError {
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("series {index} has zero norm")]
    ZeroVector { index: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("shift {shift} outside [-{q_max}, {q_max}]")]
    ShiftOutOfRange { shift: isize, q_max: usize },
    #[error("centroid of an empty member set")]
    EmptyCluster,
    #[error("symmetric eigensolver did not converge")]
    EigenFailure,
    #[error("{distinct} distinct series cannot form {k} clusters")]
    DegenerateData { distinct: usize, k: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("beta_cv undefined at k = {k}: {reason}")]
    UndefinedCv { k: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, KscError>;

/// Default shift radius for a window: a quarter of its length.
pub fn default_q_max(window: usize) -> usize {
    window / 4
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    a.iter().map(|v| v / n).collect()
}

/// Translates `x` by `q` positions (positive delays), zero-filling.
pub fn shift(x: &[f64], q: isize, q_max: usize) -> Result<Vec<f64>> {
    if q.unsigned_abs() > q_max {
        return Err(KscError::ShiftOutOfRange { shift: q, q_max });
    }
    Ok(shifted(x, q))
}

fn shifted(x: &[f64], q: isize) -> Vec<f64> {
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let j = i - q;
            if (0..n).contains(&j) {
                x[j as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// The scale `a` minimising `||x - a y||`.
pub fn optimal_alpha(x: &[f64], y: &[f64]) -> Result<f64> {
    let yy = dot(y, y);
    if yy == 0.0 {
        return Err(KscError::ZeroNorm);
    }
    Ok(dot(x, y) / yy)
}

/// Result of matching `y` onto `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub distance: f64,
    /// Shift applied to `y`.
    pub shift: isize,
    /// Scale applied to the shifted `y`.
    pub alpha: f64,
}

/// Order in which shifts are tried: 0, -1, 1, -2, 2, ...
/// Taking only strict improvements resolves ties toward small |q|, then
/// toward negative q.
fn shift_order(q_max: usize) -> impl Iterator<Item = isize> {
    std::iter::once(0).chain((1..=q_max as isize).flat_map(|q| [-q, q]))
}

/// `(x . shift(y, q), ||shift(y, q)||^2)` without materialising the shift.
fn overlap(x: &[f64], y: &[f64], q: isize) -> (f64, f64) {
    let n = x.len() as isize;
    let lo = q.max(0);
    let hi = (n + q).min(n);
    let mut xy = 0.0;
    let mut yy = 0.0;
    for i in lo..hi {
        let yv = y[(i - q) as usize];
        xy += x[i as usize] * yv;
        yy += yv * yv;
    }
    (xy, yy)
}

pub fn ksc_distance(x: &[f64], y: &[f64], q_max: usize) -> Result<Alignment> {
    if x.len() != y.len() {
        return Err(KscError::LengthMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let xx = dot(x, x);
    if xx == 0.0 || dot(y, y) == 0.0 {
        return Err(KscError::ZeroNorm);
    }
    Ok(align(x, xx.sqrt(), y, q_max))
}

/// `x_norm` must be `||x||`; both vectors nonzero and of equal length.
fn align(x: &[f64], x_norm: f64, y: &[f64], q_max: usize) -> Alignment {
    let q_max = q_max.min(x.len().saturating_sub(1));
    let mut best_q = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_alpha = 0.0;
    for q in shift_order(q_max) {
        let (xy, yy) = overlap(x, y, q);
        let (score, alpha) = if yy > 0.0 {
            (xy * xy / yy, xy / yy)
        } else {
            (0.0, 0.0)
        };
        if score > best_score {
            best_score = score;
            best_q = q;
            best_alpha = alpha;
        }
    }
    // the residual is formed explicitly: ||x||^2 - score cancels badly when
    // the match is close
    let n = x.len() as isize;
    let mut res = 0.0;
    for i in 0..n {
        let j = i - best_q;
        let yv = if (0..n).contains(&j) { y[j as usize] } else { 0.0 };
        let r = x[i as usize] - best_alpha * yv;
        res += r * r;
    }
    Alignment {
        distance: res.sqrt() / x_norm,
        shift: best_q,
        alpha: best_alpha,
    }
}

/// Summed squared shape distance of unit members to the unit vector `mu`:
/// `sum_i (1 - (x_i . mu)^2)`, which equals `mu^T M mu`.
pub fn centroid_cost(unit_members: &[Vec<f64>], mu: &[f64]) -> f64 {
    unit_members
        .iter()
        .map(|x| {
            let c = dot(x, mu);
            1.0 - c * c
        })
        .sum()
}

/// Members aligned (shift and scale) onto `current`, then unit-normalised.
pub fn align_members(members: &[&[f64]], q_max: usize, current: Option<&[f64]>) -> Vec<Vec<f64>> {
    let current = current.filter(|c| dot(c, c) > 0.0);
    members
        .iter()
        .map(|m| {
            let v = match current {
                Some(c) => {
                    let a = align(c, norm(c), m, q_max);
                    let v: Vec<f64> = shifted(m, a.shift).iter().map(|x| a.alpha * x).collect();
                    if dot(&v, &v) > 0.0 {
                        v
                    } else {
                        m.to_vec()
                    }
                }
                None => m.to_vec(),
            };
            unit(&v)
        })
        .collect()
}

/// Shape centroid of a member set.
///
/// When the smallest eigenvalue of `M` is repeated every vector in its
/// eigenspace is optimal; the one closest to the members' mean direction is
/// returned. The sign makes the entry sum non-negative.
pub fn centroid(members: &[&[f64]], q_max: usize, current: Option<&[f64]>) -> Result<Vec<f64>> {
    let first = members.first().ok_or(KscError::EmptyCluster)?;
    let len = first.len();
    for m in members {
        if m.len() != len {
            return Err(KscError::LengthMismatch {
                expected: len,
                found: m.len(),
            });
        }
        if dot(m, m) == 0.0 {
            return Err(KscError::ZeroNorm);
        }
    }
    if let Some(c) = current {
        if c.len() != len {
            return Err(KscError::LengthMismatch {
                expected: len,
                found: c.len(),
            });
        }
    }
    let aligned = align_members(members, q_max, current);

    let n = aligned.len() as f64;
    let mut m = vec![0.0; len * len];
    for i in 0..len {
        m[i * len + i] = n;
    }
    for x in &aligned {
        for i in 0..len {
            let xi = x[i];
            for j in 0..len {
                m[i * len + j] -= xi * x[j];
            }
        }
    }
    let (values, vectors) = linalg::symmetric_eigen(len, &m).ok_or(KscError::EigenFailure)?;

    let tol = linalg::RANK_TOL * n.max(1.0);
    let tied: Vec<&Vec<f64>> = values
        .iter()
        .zip(&vectors)
        .take_while(|(v, _)| **v - values[0] <= tol)
        .map(|(_, vec)| vec)
        .collect();

    let mut mu = if tied.len() > 1 {
        let mean: Vec<f64> = (0..len).map(|i| aligned.iter().map(|x| x[i]).sum()).collect();
        let mut p = vec![0.0; len];
        for v in &tied {
            let c = dot(v, &mean);
            for (pi, vi) in p.iter_mut().zip(v.iter()) {
                *pi += c * vi;
            }
        }
        if norm(&p) > 1e-12 * norm(&mean) {
            unit(&p)
        } else {
            vectors[0].clone()
        }
    } else {
        vectors[0].clone()
    };

    let sum: f64 = mu.iter().sum();
    if sum < 0.0 {
        mu.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(mu)
}

/// How the first partition is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Shuffle, then deal the vectors round-robin into k clusters.
    #[default]
    RandomPartition,
    /// Pick k seed vectors one at a time, each with probability
    /// proportional to its squared distance from the seeds so far, and assign
    /// every vector to its nearest seed.
    Spread,
}

impl std::str::FromStr for Init {
    type Err = KscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-partition" | "random" => Ok(Init::RandomPartition),
            "spread" => Ok(Init::Spread),
            other => Err(KscError::InvalidParameter(format!("unknown init {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KscParams {
    pub k: usize,
    pub q_max: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Independent random initialisations; the lowest objective wins.
    pub restarts: usize,
    pub init: Init,
}

impl KscParams {
    pub fn new(k: usize, window: usize) -> Self {
        KscParams {
            k,
            q_max: default_q_max(window),
            max_iter: 100,
            seed: 0,
            restarts: 1,
            init: Init::RandomPartition,
        }
    }

    pub fn restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn q_max(mut self, q_max: usize) -> Self {
        self.q_max = q_max;
        self
    }
}

/// Outcome of clustering a set of anonymous vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub params: KscParams,
    /// Unit-norm, ordered by increasing growth (last over first entry).
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Distance of each vector to its assigned centroid.
    pub distances: Vec<f64>,
    /// Sum of squared distances after the final assignment.
    pub objective: f64,
    /// Objective after each assignment step; non-increasing.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }
}

fn validate(vectors: &[Vec<f64>], params: &KscParams) -> Result<()> {
    if params.k == 0 {
        return Err(KscError::InvalidParameter("k must be at least 1".into()));
    }
    if params.max_iter == 0 {
        return Err(KscError::InvalidParameter("max_iter must be at least 1".into()));
    }
    let Some(first) = vectors.first() else {
        return Err(KscError::DegenerateData {
            distinct: 0,
            k: params.k,
        });
    };
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != first.len() {
            return Err(KscError::LengthMismatch {
                expected: first.len(),
                found: v.len(),
            });
        }
        if dot(v, v) == 0.0 || v.iter().any(|x| !x.is_finite()) {
            return Err(KscError::ZeroVector { index });
        }
    }
    let mut keys: Vec<Vec<u64>> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    if keys.len() < params.k {
        return Err(KscError::DegenerateData {
            distinct: keys.len(),
            k: params.k,
        });
    }
    Ok(())
}

/// Clusters `vectors` into `params.k` shape groups.
///
/// Starts from a seeded random partition, then alternates centroid updates
/// and nearest-centroid assignment until the assignment stops changing or
/// `max_iter` rounds have run. A centroid update that would raise its
/// cluster's cost is rejected, and clusters left empty take the point
/// farthest from its own centroid, so the objective never increases.
pub fn ksc_cluster(vectors: &[Vec<f64>], params: &KscParams) -> Result<Clustering> {
    validate(vectors, params)?;
    let norms: Vec<f64> = vectors.iter().map(|v| norm(v)).collect();
    let mut best: Option<Clustering> = None;
    for restart in 0..params.restarts.max(1) {
        let run = run_once(vectors, &norms, params, restart as u64)?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(relabel_by_growth(best.expect("at least one restart")))
}

fn run_once(
    vectors: &[Vec<f64>],
    norms: &[f64],
    params: &KscParams,
    restart: u64,
) -> Result<Clustering> {
    let n = vectors.len();
    let k = params.k;
    let q_max = params.q_max;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(restart));
    let mut centroids: Vec<Option<Vec<f64>>> = vec![None; k];
    let assignment = match params.init {
        Init::RandomPartition => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut assignment = vec![0; n];
            for (slot, &i) in order.iter().enumerate() {
                assignment[i] = slot % k;
            }
            assignment
        }
        Init::Spread => {
            let seeds = spread_seeds(vectors, norms, k, q_max, &mut rng);
            for (c, &s) in seeds.iter().enumerate() {
                centroids[c] = Some(unit(&vectors[s]));
            }
            let mus: Vec<&[f64]> = centroids.iter().map(|c| c.as_deref().expect("seeded")).collect();
            let mut assignment: Vec<usize> = (0..n)
                .into_par_iter()
                .map(|i| nearest(&vectors[i], norms[i], &mus, q_max).0)
                .collect();
            // a seed always keeps itself, even when duplicated elsewhere
            for (c, &s) in seeds.iter().enumerate() {
                assignment[s] = c;
            }
            assignment
        }
    };
    let mut assignment = assignment;

    let cost = |members: &[usize], mu: &[f64]| -> f64 {
        members
            .iter()
            .map(|&i| {
                let d = align(&vectors[i], norms[i], mu, q_max).distance;
                d * d
            })
            .sum()
    };

    let mut trace = Vec::new();
    let mut distances = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iter {
        iterations += 1;

        let updates: Vec<Result<Vec<f64>>> = (0..k)
            .into_par_iter()
            .map(|c| {
                let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
                let refs: Vec<&[f64]> = members.iter().map(|&i| vectors[i].as_slice()).collect();
                let current = centroids[c].as_deref();
                let candidate = centroid(&refs, q_max, current)?;
                Ok(match current {
                    Some(cur) if cost(&members, &candidate) > cost(&members, cur) => cur.to_vec(),
                    _ => candidate,
                })
            })
            .collect();
        for (c, u) in updates.into_iter().enumerate() {
            centroids[c] = Some(u?);
        }
        let mus: Vec<&[f64]> = centroids.iter().map(|c| c.as_deref().expect("set")).collect();

        let closest: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(&vectors[i], norms[i], &mus, q_max))
            .collect();
        let mut next: Vec<usize> = closest.iter().map(|p| p.0).collect();
        distances = closest.iter().map(|p| p.1).collect();

        // reseed empty clusters with the worst-fitting point of a cluster
        // that can spare one
        loop {
            let mut sizes = vec![0usize; k];
            for &a in &next {
                sizes[a] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let donor = (0..n)
                .filter(|&i| sizes[next[i]] > 1)
                .max_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(b.cmp(&a)))
                .expect("n >= k leaves a cluster with two members");
            next[donor] = empty;
            distances[donor] = 0.0;
            centroids[empty] = Some(unit(&vectors[donor]));
        }

        trace.push(distances.iter().map(|d| d * d).sum());
        let stable = next == assignment;
        assignment = next;
        if stable {
            converged = true;
            break;
        }
    }

    let objective = *trace.last().expect("at least one iteration");
    Ok(Clustering {
        params: params.clone(),
        centroids: centroids.into_iter().map(|c| c.expect("set")).collect(),
        assignment,
        distances,
        objective,
        trace,
        iterations,
        converged,
    })
}

fn nearest(x: &[f64], x_norm: f64, mus: &[&[f64]], q_max: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in mus.iter().enumerate() {
        let d = align(x, x_norm, mu, q_max).distance;
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Distance-weighted seeding: each new seed is drawn with probability
/// proportional to the squared distance to its closest existing seed.
fn spread_seeds(
    vectors: &[Vec<f64>],
    norms: &[f64],
    k: usize,
    q_max: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = vectors.len();
    let mut seeds = vec![rng.random_range(0..n)];
    let mut d2 = vec![f64::INFINITY; n];
    while seeds.len() < k {
        let last = unit(&vectors[*seeds.last().expect("non-empty")]);
        let fresh: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| align(&vectors[i], norms[i], &last, q_max).distance.powi(2))
            .collect();
        for (d, f) in d2.iter_mut().zip(fresh) {
            *d = d.min(f);
        }
        for &s in &seeds {
            d2[s] = 0.0;
        }
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("positive total");
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // every remaining vector coincides with a seed in shape
            (0..n).find(|i| !seeds.contains(i)).expect("n >= k")
        };
        seeds.push(next);
    }
    seeds
}

/// Relative growth of a centroid from its first to its last entry.
pub fn centroid_growth(mu: &[f64]) -> f64 {
    let (Some(&first), Some(&last)) = (mu.first(), mu.last()) else {
        return 0.0;
    };
    let scale = mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if first.abs() <= 1e-12 * scale {
        return f64::INFINITY;
    }
    (last - first) / first
}

fn relabel_by_growth(mut c: Clustering) -> Clustering {
    let k = c.centroids.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        centroid_growth(&c.centroids[a])
            .total_cmp(&centroid_growth(&c.centroids[b]))
            .then(a.cmp(&b))
    });
    let mut new_label = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        new_label[old] = new;
    }
    c.centroids = order.iter().map(|&old| c.centroids[old].clone()).collect();
    for a in &mut c.assignment {
        *a = new_label[*a];
    }
    c
}
