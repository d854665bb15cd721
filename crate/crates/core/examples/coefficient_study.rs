//! A small Monte Carlo study of bias, coverage and standard errors.
//!
//!     cargo run --release --example coefficient_study -- 200

use rmst_td::report::table1;
use rmst_td::sim::*;

fn main() {
    let reps = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let base = SimConfig { replicates: reps, ..SimConfig::default() };
    let truth = true_coefficients(&base, 100_000).unwrap();
    let mut reports = Vec::new();
    for n in [500, 1000] {
        let (r, _) = run_coefficient_study(&SimConfig { n, ..base.clone() }, &truth).unwrap();
        reports.push(r);
    }
    print!("{}", table1(&reports));
}
