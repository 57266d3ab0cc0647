//! Synthetic star histories drawn from five growth-trend families.

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{RepoMeta, RepoName};
use crate::timeseries::{filter_dataset, Candidate, Dataset, StarSeries, WindowedSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    SlowLinear,
    ModerateLinear,
    FastLinear,
    Ramp,
    LateBurst,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::SlowLinear,
        Family::ModerateLinear,
        Family::FastLinear,
        Family::Ramp,
        Family::LateBurst,
    ];

    /// Stars gained over the window relative to the stars held at its start.
    pub fn growth(self) -> f64 {
        match self {
            Family::SlowLinear => 0.199,
            Family::ModerateLinear => 0.613,
            Family::FastLinear => 1.751,
            Family::Ramp => 8.832,
            Family::LateBurst => 16.591,
        }
    }

    /// Relative weight of week `w` (0-based) in a window of `len` weeks.
    fn weight(self, w: usize, len: usize) -> f64 {
        let x = (w as f64 + 0.5) / len as f64;
        match self {
            Family::SlowLinear | Family::ModerateLinear | Family::FastLinear => 1.0,
            Family::Ramp => {
                let z = (x - 0.5) / 0.06;
                0.05 + 1.0 / (z.exp() + 2.0 + (-z).exp())
            }
            Family::LateBurst => ((x - 1.0) / 0.15).exp(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Family::SlowLinear => "slow-linear",
            Family::ModerateLinear => "moderate-linear",
            Family::FastLinear => "fast-linear",
            Family::Ramp => "ramp",
            Family::LateBurst => "late-burst",
        }
    }
}

/// Per-family variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    /// Bound on the multiplicative noise applied to weekly increments.
    pub noise: f64,
    /// Spread of each series' growth around the family value, as a fraction.
    pub growth_jitter: f64,
}

impl FamilySpec {
    /// Defaults chosen so every family has a similar spread under the
    /// shape distance.
    pub fn default_for(family: Family) -> Self {
        let (noise, growth_jitter) = match family {
            Family::SlowLinear => (0.10, 0.30),
            Family::ModerateLinear => (0.10, 0.13),
            Family::FastLinear => (0.10, 0.10),
            Family::Ramp => (0.10, 0.16),
            Family::LateBurst => (0.05, 0.10),
        };
        FamilySpec {
            family,
            noise,
            growth_jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub per_family: usize,
    pub window: usize,
    pub families: Vec<FamilySpec>,
    /// Stars at the start of the window are drawn log-uniformly from this range.
    pub base_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_family: 200,
            window: 52,
            families: Family::ALL.map(FamilySpec::default_for).to_vec(),
            base_range: (300.0, 30_000.0),
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Same noise and growth spread for every family.
    pub fn uniform(mut self, noise: f64, growth_jitter: f64) -> Self {
        for f in &mut self.families {
            f.noise = noise;
            f.growth_jitter = growth_jitter;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub series: WindowedSeries,
    pub family: Family,
}

fn draw(rng: &mut ChaCha8Rng, spec: &FamilySpec, cfg: &SynthConfig) -> (u64, Vec<u64>) {
    let (lo, hi) = cfg.base_range;
    let family = spec.family;
    let base = (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp().round();
    let gain = base * family.growth() * (1.0 + spec.growth_jitter * rng.random_range(-1.0..=1.0));
    let weights: Vec<f64> = (0..cfg.window)
        .map(|w| family.weight(w, cfg.window) * (1.0 + spec.noise * rng.random_range(-1.0..=1.0)))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let gained = weights
        .iter()
        .map(|w| {
            acc += gain * w / total;
            acc.round() as u64
        })
        .collect();
    (base as u64, gained)
}

/// `per_family` series from every configured family, interleaved.
/// Repositories are named `<family>/r<index>`.
pub fn generate(cfg: &SynthConfig) -> Vec<LabeledSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.per_family * Family::ALL.len());
    for i in 0..cfg.per_family {
        for spec in &cfg.families {
            let family = spec.family;
            let (base, gained) = draw(&mut rng, spec, cfg);
            let repo = RepoName::parse(&format!("{}/r{i:04}", family.label())).expect("valid name");
            out.push(LabeledSeries {
                series: WindowedSeries { repo, base, gained },
                family,
            });
        }
    }
    out
}

/// Fraction of items whose cluster's majority label matches their own.
pub fn purity<L: Ord + Copy>(assignment: &[usize], labels: &[L]) -> f64 {
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<usize, BTreeMap<L, usize>> = BTreeMap::new();
    for (&c, &l) in assignment.iter().zip(labels) {
        *counts.entry(c).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = counts
        .values()
        .map(|m| m.values().copied().max().unwrap_or(0))
        .sum();
    majority as f64 / assignment.len().max(1) as f64
}

/// Full star histories whose last `window` weeks follow the generated
/// families; the weeks before the window grow linearly up to the base. Every
/// `newcomer_every`-th repository (when nonzero) is younger than the window,
/// so dataset filtering drops it as too short.
pub fn synthetic_candidates(cfg: &SynthConfig, cutoff: DateTime<Utc>, newcomer_every: usize) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let languages = ["Rust", "Go", "JavaScript", "Python", "Java"];
    generate(cfg)
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let young = newcomer_every > 0 && i % newcomer_every == newcomer_every - 1;
            let pre = if young { 0 } else { rng.random_range(4..=60usize) };
            let mut values: Vec<u64> = (1..=pre)
                .map(|w| (l.series.base as f64 * w as f64 / pre as f64).round() as u64)
                .collect();
            let base = if young { 0 } else { l.series.base };
            let keep = if young { cfg.window / 2 } else { cfg.window };
            values.extend(l.series.gained[..keep].iter().map(|g| base + g));
            let created_at = cutoff - Duration::weeks(values.len() as i64) + Duration::hours(1);
            let language = Some(languages[i % languages.len()].to_string());
            let meta = RepoMeta {
                full_name: l.series.repo.clone(),
                created_at,
                primary_language: language.clone(),
                total_stars: values.last().copied().unwrap_or(0),
            };
            Candidate {
                meta,
                series: StarSeries {
                    repo: l.series.repo,
                    created_at,
                    language,
                    values,
                },
                complete: true,
            }
        })
        .collect()
}

/// The filtered dataset built from [`synthetic_candidates`] without newcomers.
pub fn synthetic_dataset(cfg: &SynthConfig, cutoff: DateTime<Utc>) -> Dataset {
    filter_dataset(synthetic_candidates(cfg, cutoff, 0), cutoff, cfg.window).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_reach_their_growth() {
        let cfg = SynthConfig {
            per_family: 50,
            ..Default::default()
        }
        .uniform(0.0, 0.0);
        for l in generate(&cfg) {
            let s = &l.series;
            let g = *s.gained.last().unwrap() as f64 / s.base as f64;
            assert!((g - l.family.growth()).abs() < 0.01, "{:?} {g}", l.family);
            assert!(s.gained.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            per_family: 5,
            seed: 3,
            ..Default::default()
        };
        assert_eq!(generate(&cfg), generate(&cfg));
        let other = SynthConfig { seed: 4, ..cfg.clone() };
        assert_ne!(generate(&cfg), generate(&other));
    }

    #[test]
    fn purity_examples() {
        assert_eq!(purity(&[0, 0, 1, 1], &['a', 'a', 'b', 'b']), 1.0);
        assert_eq!(purity(&[0, 0, 0, 0], &['a', 'a', 'b', 'b']), 0.5);
        assert_eq!(purity(&[1, 0, 1, 0], &['a', 'a', 'b', 'b']), 0.5);
    }

    #[test]
    fn dataset_windows_match_generator() {
        let cfg = SynthConfig {
            per_family: 4,
            ..Default::default()
        };
        let cutoff = "2016-07-01T00:00:00Z".parse().unwrap();
        let ds = synthetic_dataset(&cfg, cutoff);
        let gen = generate(&cfg);
        assert_eq!(ds.len(), gen.len());
        for (w, l) in ds.windowed().iter().zip(&gen) {
            assert_eq!(w, &l.series);
        }
        let cands = synthetic_candidates(&cfg, cutoff, 5);
        assert_eq!(cands[4].series.values.len(), 26);
        let (kept, report) = filter_dataset(cands, cutoff, cfg.window);
        assert_eq!((kept.len(), report.excluded.len()), (16, 4));
    }
}
