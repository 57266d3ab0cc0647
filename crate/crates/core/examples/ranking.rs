//! Ranks repositories by predicted and by real stars, correlates the two and
//! prints the side-by-side table with newcomers marked.

use stargaze::ingest::RepoName;
use stargaze::ranking::{compare_rankings, rank_by_stars, rank_table, topk_correlation, write_rank_table};

fn main() {
    let real = [
        ("twbs/bootstrap", 91_000.0),
        ("facebook/react", 50_000.0),
        ("angular/angular.js", 49_000.0),
        ("tensorflow/tensorflow", 31_000.0),
        ("d3/d3", 30_000.0),
        ("jquery/jquery", 28_000.0),
    ];
    // tensorflow is younger than the window, so it has no prediction
    let generic = [
        ("twbs/bootstrap", 88_000.0),
        ("facebook/react", 44_000.0),
        ("angular/angular.js", 52_000.0),
        ("d3/d3", 26_500.0),
        ("jquery/jquery", 27_900.0),
    ];
    let specific = [
        ("twbs/bootstrap", 90_500.0),
        ("facebook/react", 49_800.0),
        ("angular/angular.js", 48_700.0),
        ("d3/d3", 29_600.0),
        ("jquery/jquery", 28_100.0),
    ];
    let ranked = |rows: &[(&str, f64)]| rank_by_stars(rows.iter().map(|(r, s)| (RepoName::parse(r).unwrap(), *s)));
    let real = ranked(&real);

    let g = compare_rankings(&ranked(&generic), &real).unwrap();
    let s = compare_rankings(&ranked(&specific), &real).unwrap();
    println!("generic  rho {:.3} ({})", g.rho, g.p_note);
    println!("specific rho {:.3} ({})", s.rho, s.p_note);
    println!("top-3 specific: {:?}", topk_correlation(&ranked(&specific), &real, &[3]).unwrap());
    println!(
        "{} newcomers; generic over/under/exact {}/{}/{}",
        g.newcomers, g.overestimated, g.underestimated, g.exact
    );
    write_rank_table(&rank_table(&g, &s).unwrap(), std::io::stdout().lock()).unwrap();
}
