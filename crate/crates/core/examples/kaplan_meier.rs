//! Kaplan–Meier curves for survival and for censoring, and the restricted
//! mean as the area under the curve.

use rmst_td::heart::stanford_heart;
use rmst_td::survival::{kaplan_meier, restrict};

fn main() {
    let data = stanford_heart();
    let surv = kaplan_meier(&data, false).unwrap();
    let cens = kaplan_meier(&data, true).unwrap();

    for t in [0.25, 0.5, 1.0, 2.0, 3.0, 4.0] {
        println!("t = {t:4.2}  S(t) = {:.3}  G(t) = {:.3}", surv.eval(t), cens.eval(t));
    }
    for tau in [1.0, 2.0, 4.93] {
        let view = restrict(&data, tau).unwrap();
        let complete = view.delta_tilde.iter().filter(|d| **d).count();
        println!("tau = {tau}: RMST {:.3} y, {complete} of {} complete", surv.integrate(tau), view.y.len());
    }
}
