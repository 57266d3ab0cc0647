//! 10-fold cross-validated error for a grid of predictor weeks, at one
//! target and at several targets with t_r as a fraction of each.

use stargaze::eval::{evaluate_multi_target, evaluate_sweep, kfold_split, max_feasible_t_r};
use stargaze::synth::{generate, SynthConfig};

fn main() {
    let data: Vec<_> = generate(&SynthConfig {
        per_family: 14,
        seed: 8,
        ..Default::default()
    })
    .into_iter()
    .map(|l| l.series)
    .collect();
    let plan = kfold_split(data.len(), 10, 5).unwrap();
    println!("{} repositories, t_r up to {} is feasible", data.len(), max_feasible_t_r(&plan));

    let grid: Vec<usize> = (4..=52).step_by(4).collect();
    let sweep = evaluate_sweep(&data, &grid, 52, &plan).unwrap();
    for r in &sweep.rows {
        println!("t_r = {:>2}  mRSE {:.4} +/- {:.4}", r.t_r, r.mrse, r.ci95);
    }

    for report in evaluate_multi_target(&data, &[0.25, 0.5, 0.75], &[13, 26, 52], &plan).unwrap() {
        let cells: Vec<String> = report.rows.iter().map(|r| format!("t_r {}: {:.4}", r.t_r, r.mrse)).collect();
        println!("t = {:>2}  {}", report.target_t, cells.join("  "));
    }
}
