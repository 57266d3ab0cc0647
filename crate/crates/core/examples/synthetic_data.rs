//! Generates the five synthetic growth families and writes them as a
//! dataset file.

use chrono::{TimeZone, Utc};
use stargaze::synth::{generate, synthetic_dataset, Family, SynthConfig};
use stargaze::timeseries::write_dataset;

fn main() {
    let cfg = SynthConfig {
        per_family: 3,
        seed: 42,
        ..Default::default()
    };
    for f in Family::ALL {
        println!("{:<16} growth {:>5.2}", f.label(), f.growth());
    }
    for l in generate(&cfg).iter().step_by(3) {
        let s = &l.series;
        println!("{} ({}): base {}, +{} over the window", s.repo, l.family.label(), s.base, s.gained_at(s.window()));
    }
    let cutoff = Utc.with_ymd_and_hms(2016, 4, 25, 0, 0, 0).unwrap();
    let dataset = synthetic_dataset(&cfg, cutoff);
    let mut out = Vec::new();
    write_dataset(&dataset, &mut out).unwrap();
    println!("{} repositories, {} bytes of dataset file", dataset.len(), out.len());
}
