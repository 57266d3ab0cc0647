use proptest::prelude::*;
use stargaze::ingest::RepoName;
use stargaze::ranking::{average_ranks, compare_rankings, rank_by_stars, spearman, spearman_values, topk_correlation};

fn repo(i: usize) -> RepoName {
    RepoName::parse(&format!("o/r{i:03}")).unwrap()
}

/// Pearson correlation of average ranks, computed directly.
fn pearson_on_ranks(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Score vectors with plenty of ties and non-constant values.
fn tied_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..=12).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..5, n),
            prop::collection::vec(0u8..5, n),
        )
            .prop_filter("non-constant", |(x, y)| {
                x.iter().any(|v| *v != x[0]) && y.iter().any(|v| *v != y[0])
            })
            .prop_map(|(x, y)| {
                (
                    x.into_iter().map(f64::from).collect(),
                    y.into_iter().map(f64::from).collect(),
                )
            })
    })
}

proptest! {
    #[test]
    fn matches_pearson_on_average_ranks((x, y) in tied_pair()) {
        let rho = spearman_values(&x, &y).unwrap();
        prop_assert!((rho - pearson_on_ranks(&x, &y)).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&rho));
    }

    #[test]
    fn symmetric((x, y) in tied_pair()) {
        let a = spearman_values(&x, &y).unwrap();
        let b = spearman_values(&y, &x).unwrap();
        prop_assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn invariant_under_monotone_maps((x, y) in tied_pair(), shift in -50.0f64..50.0, scale in 0.1f64..10.0) {
        let base = spearman_values(&x, &y).unwrap();
        let fx: Vec<f64> = x.iter().map(|v| (v * scale + shift).exp()).collect();
        let fy: Vec<f64> = y.iter().map(|v| v.powi(3) + shift).collect();
        prop_assert!((spearman_values(&fx, &fy).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn rankings_agree_with_scores(scores in prop::collection::vec(0u32..20, 3..30)) {
        let a = rank_by_stars(scores.iter().enumerate().map(|(i, &s)| (repo(i), f64::from(s))));
        for w in a.entries.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
            prop_assert!(w[0].rank + 1 == w[1].rank);
        }
        if scores.iter().any(|&s| s != scores[0]) {
            prop_assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn newcomers_plus_correlated_is_real_size(
        real in prop::collection::vec(1u32..1000, 4..40),
        noise in prop::collection::vec(-50i32..50, 40),
        keep_every in 2usize..6,
    ) {
        let predicted: Vec<(RepoName, f64)> = real
            .iter()
            .enumerate()
            .filter(|(i, _)| i % keep_every != 0)
            .map(|(i, &s)| (repo(i), f64::from(s) + f64::from(noise[i])))
            .collect();
        prop_assume!(predicted.len() >= 3);
        prop_assume!(predicted.iter().any(|p| p.1 != predicted[0].1));
        let real_r = rank_by_stars(real.iter().enumerate().map(|(i, &s)| (repo(i), f64::from(s))));
        let pred_r = rank_by_stars(predicted);
        let c = match compare_rankings(&pred_r, &real_r) {
            Ok(c) => c,
            // real scores of the common subset may all tie
            Err(_) => return Ok(()),
        };
        prop_assert_eq!(c.newcomers + c.correlated, real.len());
        prop_assert_eq!(c.rows.len(), real.len());
        prop_assert_eq!(c.overestimated + c.underestimated + c.exact, c.correlated);
        for r in &c.rows {
            prop_assert_eq!(r.diff, r.predicted_rank.map(|p| p as i64 - r.real_rank as i64));
        }
    }
}

#[test]
fn one_swap_matches_direct_formula() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [1.0, 3.0, 2.0, 4.0, 5.0];
    // 1 - 6 * sum(d^2) / (n (n^2 - 1)) with sum(d^2) = 2
    assert!((spearman_values(&x, &y).unwrap() - 0.9).abs() < 1e-15);
}

#[test]
fn full_topk_equals_overall_rho() {
    let real = rank_by_stars((0..20).map(|i| (repo(i), f64::from(100 - i as u32))));
    let pred = rank_by_stars((0..20).map(|i| (repo(i), f64::from(((i * 7) % 20) as u32))));
    let overall = compare_rankings(&pred, &real).unwrap().rho;
    let top = topk_correlation(&pred, &real, &[20]).unwrap();
    assert_eq!(top, vec![(20, overall)]);
}
