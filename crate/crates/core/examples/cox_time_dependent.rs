//! Time-dependent Cox model on the Stanford data: hazard ratios with Wald
//! intervals, Nagelkerke R², and the censoring model used for IPCW.

use rmst_td::cox::*;
use rmst_td::heart::stanford_heart;
use rmst_td::report::cox_table;

fn main() {
    let data = stanford_heart();
    let opts = CoxOptions { ties: Ties::Efron, ..CoxOptions::default() };
    let fit = fit_cox(&data, CovariateSelector::All, EventDefinition::Outcome, opts).unwrap();
    print!("{}", cox_table(&cox_summary(&fit).unwrap()));
    println!("R2 = {:.3}  ({} iterations)", nagelkerke_r2(&fit).unwrap(), fit.iterations);

    // censoring hazard given transplant status, as used by the RMST weights
    let cens = fit_cox(&data, CovariateSelector::TimeDependent, EventDefinition::Censoring, CoxOptions::default())
        .unwrap();
    println!("censoring model: transplant coef {:.3} (se {:.3})", cens.coefficients[0], cens.standard_errors()[0]);
    let s = &data.subjects()[10];
    println!("subject {}: censoring cumhaz at exit {:.4}", s.id, cens.subject_cumhaz(s, s.exit()));
}
