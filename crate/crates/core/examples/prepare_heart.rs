//! Writes the prepared Stanford heart-transplant data as a counting-process
//! CSV, ready for `rmst-td fit --data heart.csv --schema-td transplant`.
//!
//!     cargo run --example prepare_heart > heart.csv

use rmst_td::heart::stanford_heart;
use rmst_td::survival::write_csv;

fn main() {
    let data = stanford_heart();
    eprintln!(
        "{} subjects, {} rows, {} deaths; fixed {:?}, time-dependent {:?}",
        data.n_subjects(),
        data.n_rows(),
        data.n_events(),
        data.fixed_names(),
        data.td_names()
    );
    write_csv(&data, std::io::stdout().lock()).expect("write to stdout");
}
