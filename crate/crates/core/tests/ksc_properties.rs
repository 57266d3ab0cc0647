use proptest::prelude::*;
use stargaze::ksc::{ksc_cluster, ksc_distance, KscParams};

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..100.0, len).prop_filter("nonzero", |v| v.iter().any(|x| *x > 1e-3))
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..24).prop_flat_map(|n| (vector(n), vector(n)))
}

fn sin_angle(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|b| b * b).sum::<f64>().sqrt();
    let cos = (dot / (nx * ny)).clamp(-1.0, 1.0);
    (1.0 - cos * cos).max(0.0).sqrt()
}

proptest! {
    #[test]
    fn distance_is_scale_invariant_and_zero_on_itself((x, y) in pair(), q in 0usize..6, c in 1e-3f64..1e3) {
        let d = ksc_distance(&x, &y, q).unwrap().distance;
        prop_assert!(d >= 0.0);
        let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
        prop_assert!((ksc_distance(&x, &scaled, q).unwrap().distance - d).abs() < 1e-9);
        prop_assert!(ksc_distance(&x, &x, q).unwrap().distance < 1e-7);
    }

    #[test]
    fn unshifted_distance_is_the_sine((x, y) in pair()) {
        let d = ksc_distance(&x, &y, 0).unwrap().distance;
        prop_assert!((d - sin_angle(&x, &y)).abs() < 1e-7);
        prop_assert!((d - ksc_distance(&y, &x, 0).unwrap().distance).abs() < 1e-7);
    }

    #[test]
    fn objective_never_rises_and_runs_repeat(
        data in prop::collection::vec(vector(12), 6..30),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let params = KscParams::new(k, 12).seed(seed);
        let a = ksc_cluster(&data, &params).unwrap();
        for w in a.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        prop_assert_eq!(&a, &ksc_cluster(&data, &params).unwrap());
    }
}
