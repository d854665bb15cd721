//! RMST regression on the Stanford data at tau = 4.93 years, with and without
//! the time-dependent transplant indicator, and two individual predictions.

use rmst_td::heart::stanford_heart;
use rmst_td::report::rmst_table;
use rmst_td::rmst::{fit_model, predict_rmst, RmstOptions};

fn main() {
    let data = stanford_heart();
    let opts = RmstOptions::new(4.93);

    let t = fit_model(&data, &opts).unwrap();
    println!("time-dependent (R2 = {:.3})", t.r2);
    print!("{}", rmst_table(&t.fit));

    let f = fit_model(&data.without_td(), &opts).unwrap();
    println!("\nfixed covariates only (R2 = {:.3})", f.r2);
    print!("{}", rmst_table(&f.fit));

    // age < 45, enrolled one year after the program start, prior bypass
    for transplant in [0.0, 1.0] {
        let p = predict_rmst(&t.fit, &[0.0, 0.0, 1.0, 1.0, transplant]).unwrap();
        println!("transplant = {transplant}: {:.3} y (95% CI {:.3}, {:.3})", p.mu, p.ci_low, p.ci_high);
    }
}
