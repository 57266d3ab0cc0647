//! Evaluates beta_CV over a range of k and picks the first stable one.

use stargaze::ksc::{beta_cv_sweep, select_k, Init, KscParams};
use stargaze::synth::{generate, SynthConfig};

fn main() {
    let vectors: Vec<Vec<f64>> = generate(&SynthConfig {
        per_family: 16,
        seed: 4,
        ..Default::default()
    })
    .iter()
    .map(|l| l.series.totals())
    .collect();

    let base = KscParams::new(2, 52).init(Init::Spread).restarts(3).seed(9);
    let (_, curve) = beta_cv_sweep(&vectors, 2..=10, &base).unwrap();
    for (k, b) in &curve.entries {
        println!("k = {k:>2}  beta_CV = {b:.4}");
    }
    let pick = select_k(&curve, 0.1, 3);
    println!("selected k = {} (stable: {})", pick.k, pick.stable);
}
