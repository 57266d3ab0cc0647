//! Clusters synthetic growth curves with KSC and reports how well the
//! clusters recover the generating families.

use stargaze::ksc::{cluster_dataset, ksc_distance, Init, KscParams};
use stargaze::synth::{generate, purity, SynthConfig};

fn main() {
    let labeled = generate(&SynthConfig {
        per_family: 20,
        seed: 11,
        ..Default::default()
    });
    let series: Vec<_> = labeled.iter().map(|l| l.series.clone()).collect();

    let a = series[0].totals();
    let b: Vec<f64> = a.iter().map(|v| 3.0 * v).collect();
    println!("distance to a scaled copy: {:.2e}", ksc_distance(&a, &b, 13).unwrap().distance);

    let params = KscParams::new(5, 52).init(Init::Spread).restarts(3).seed(2);
    let model = cluster_dataset(&series, &params).unwrap();
    println!(
        "{} iterations, objective {:.4}, converged = {}",
        model.iterations, model.objective, model.converged
    );
    for (c, (size, growth)) in model.sizes().iter().zip(model.growth_pct()).enumerate() {
        println!("C{}: {size:>3} repositories, {growth:>7.1}% growth", c + 1);
    }
    let assignment: Vec<usize> = model.assignment.iter().map(|a| a.cluster).collect();
    let families: Vec<_> = labeled.iter().map(|l| l.family).collect();
    println!("purity {:.3}", purity(&assignment, &families));
}
