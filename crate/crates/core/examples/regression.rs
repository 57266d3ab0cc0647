//! Fits the linear model that predicts the stars gained by week t from the
//! first t_r weeks, then applies it to unseen repositories.

use stargaze::regress::{fit, mrse, Scope};
use stargaze::synth::{generate, SynthConfig};

fn main() {
    let data: Vec<_> = generate(&SynthConfig {
        per_family: 30,
        seed: 21,
        ..Default::default()
    })
    .into_iter()
    .map(|l| l.series)
    .collect();
    let (train, test): (Vec<_>, Vec<_>) = data.iter().enumerate().partition(|(i, _)| i % 4 != 0);
    let train: Vec<_> = train.into_iter().map(|(_, s)| s).collect();

    for t_r in [4, 13, 26, 39] {
        let model = fit(&train, t_r, 52, Scope::Generic).unwrap();
        let preds: Vec<_> = test.iter().map(|(_, s)| model.predict_series(s).unwrap()).collect();
        let err = mrse(&preds).unwrap();
        println!(
            "t_r = {t_r:>2}: {} coefficients, mRSE {:.4} +/- {:.4} on {} repositories",
            model.coeffs.len(),
            err.mean,
            err.ci95,
            err.n
        );
    }

    let model = fit(&train, 26, 52, Scope::Generic).unwrap();
    let p = model.predict_series(test[0].1).unwrap();
    println!(
        "{}: predicted {:.0}, actual {}, {:+.2}%",
        p.repo,
        p.predicted,
        p.actual,
        p.pct_diff().unwrap()
    );
}
