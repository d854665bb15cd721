//! Repeated 2:1 splits of the Stanford data: C-index and prediction error.

use rmst_td::eval::{c_index, repeated_evaluation, EvalOptions, ModelKind, Orientation};
use rmst_td::heart::stanford_heart;
use rmst_td::report::table4;
use rmst_td::rmst::RmstOptions;

fn main() {
    let data = stanford_heart();

    // scoring by age >= 60 alone
    let (scores, (times, events)): (Vec<f64>, (Vec<f64>, Vec<bool>)) =
        data.subjects().iter().map(|s| (s.fixed[1], (s.exit(), s.died()))).unzip();
    let c = c_index(&scores, &times, &events, Orientation::HigherIsRiskier).unwrap();
    println!("age >= 60 as a risk score: C = {:.3} over {} pairs", c.c_index, c.usable_pairs);

    let opts = EvalOptions { rmst: RmstOptions::new(4.93), ..EvalOptions::default() };
    let models = [ModelKind::TCox, ModelKind::TRmst, ModelKind::FRmst];
    let summary = repeated_evaluation(&data, &models, 2.0 / 3.0, 100, 1, &opts);
    print!("{}", table4(&summary));
}
