//! Compares cluster-specific models with the generic one: per-cluster error
//! sweeps and per-repository improvement in percentage points.

use std::collections::{BTreeSet, HashMap};

use stargaze::eval::{cross_validate, cross_validate_specific, evaluate_specific, improvement, kfold_split};
use stargaze::ksc::{cluster_dataset, Init, KscParams};
use stargaze::regress::Scope;
use stargaze::synth::{generate, SynthConfig};

fn main() {
    let data: Vec<_> = generate(&SynthConfig {
        per_family: 40,
        seed: 3,
        ..Default::default()
    })
    .into_iter()
    .map(|l| l.series)
    .collect();
    let clusters = cluster_dataset(&data, &KscParams::new(5, 52).init(Init::Spread).restarts(3).seed(1)).unwrap();
    // the highest-growth cluster gets no specific model
    let excluded = BTreeSet::from([4]);
    let (t_r, folds, seed) = (13, 10, 6);

    for report in evaluate_specific(&data, &clusters, &excluded, &[t_r, 26], 52, folds, seed).unwrap() {
        for r in &report.rows {
            println!("{} t_r = {:>2}: mRSE {:.4} over {}", report.scope, r.t_r, r.mrse, r.n);
        }
    }

    let plan = kfold_split(data.len(), folds, seed).unwrap();
    let generic = cross_validate(&data, t_r, 52, &plan, Scope::Generic).unwrap();
    let specific = cross_validate_specific(&data, &clusters, &excluded, t_r, 52, folds, seed).unwrap();
    let (g, s): (Vec<_>, Vec<_>) = specific
        .iter()
        .map(|(&i, (_, p))| (generic[i].clone(), p.clone()))
        .unzip();
    let lookup: HashMap<_, _> = clusters.assignment.iter().map(|a| (a.repo.clone(), a.cluster)).collect();
    let (_, summary) = improvement(&g, &s, &lookup).unwrap();
    for q in summary {
        println!(
            "C{} ({} repositories): improvement median {:+.2} pp, IQR [{:+.2}, {:+.2}]",
            q.cluster + 1,
            q.n,
            q.median,
            q.q1,
            q.q3
        );
    }
}
