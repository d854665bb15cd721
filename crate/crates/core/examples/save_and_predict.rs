//! Fit, write a model file, read it back and predict from it.

use rmst_td::eval::ModelKind;
use rmst_td::heart::stanford_heart;
use rmst_td::model_file::ModelFile;
use rmst_td::rmst::{fit_model, predict_rmst, RmstOptions};

fn main() {
    let data = stanford_heart();
    let opts = RmstOptions::new(4.93);
    let m = fit_model(&data, &opts).unwrap();
    let text = ModelFile::from_rmst(ModelKind::TRmst, &m.fit, data.fixed_names(), data.td_names(), opts.weight_scheme)
        .render();
    print!("{text}");

    let back = ModelFile::parse(&text).unwrap().rmst_fit().unwrap();
    assert_eq!(back.eta, m.fit.eta);
    let p = predict_rmst(&back, &[1.0, 0.0, 2.5, 0.0, 1.0]).unwrap();
    println!("age 45-60, enrolled 2.5 y in, transplanted: {:.3} ({:.3}, {:.3})", p.mu, p.ci_low, p.ci_high);
}
