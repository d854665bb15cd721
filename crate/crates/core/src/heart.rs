//! Stanford heart-transplant data preparation.
//!
//! Source: the public `heart` table (103 patients, counting-process layout with
//! transplant as a time-dependent indicator), shipped as `data/heart.csv`. Its
//! times are days since acceptance plus one; the transform below restores days
//! since acceptance, applies the usual half-day fix to the patient who died on
//! the day of acceptance, and converts to years.
//!
//! Output columns: `age_45_60`, `age_60` (dummies against age < 45),
//! `enrollment` (years since 1 Oct 1967), `surgery` (prior bypass), and the
//! time-dependent `transplant`.

use std::io::Read;

use crate::survival::{DataError, Dataset, SurvivalRecord};

pub const RAW_CSV: &str = include_str!("../data/heart.csv");

pub const FIXED: [&str; 4] = ["age_45_60", "age_60", "enrollment", "surgery"];
pub const TIME_DEPENDENT: [&str; 1] = ["transplant"];

const DAYS_PER_YEAR: f64 = 365.25;
const DAY_ZERO_EXIT: f64 = 0.5;
/// `age` in the source is centred at 48 years
const AGE_CENTRE: f64 = 48.0;

struct RawRow {
    id: String,
    start: f64,
    stop: f64,
    event: bool,
    age: f64,
    year: f64,
    surgery: f64,
    transplant: f64,
}

fn parse(reader: impl Read) -> Result<Vec<RawRow>, DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(|e| DataError::Parse { line: 1, msg: e.to_string() })?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::Parse { line: 1, msg: format!("missing column `{name}`") })
    };
    let cols = ["id", "start", "stop", "event", "age", "year", "surgery", "transplant"].map(col);
    let mut idx = [0usize; 8];
    for (k, c) in cols.into_iter().enumerate() {
        idx[k] = c?;
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| DataError::Parse { line, msg: e.to_string() })?;
        let num = |j: usize| -> Result<f64, DataError> {
            rec[idx[j]].trim().parse().map_err(|_| DataError::Parse {
                line,
                msg: format!("cannot parse `{}`", &rec[idx[j]]),
            })
        };
        rows.push(RawRow {
            id: rec[idx[0]].trim().to_string(),
            start: num(1)?,
            stop: num(2)?,
            event: num(3)? != 0.0,
            age: num(4)?,
            year: num(5)?,
            surgery: num(6)?,
            transplant: num(7)?,
        });
    }
    Ok(rows)
}

/// Turns the raw table into the analysis dataset (times in years).
pub fn prepare_heart(reader: impl Read) -> Result<Dataset, DataError> {
    let raw = parse(reader)?;
    let mut records: Vec<SurvivalRecord> = Vec::with_capacity(raw.len());
    for (k, r) in raw.iter().enumerate() {
        let terminal = raw.get(k + 1).is_none_or(|next| next.id != r.id);
        let start = if r.start > 0.0 { r.start - 1.0 } else { 0.0 };
        let mut stop = r.stop - 1.0;
        if stop <= start {
            if !terminal {
                // zero-length waiting period before a same-day transplant
                continue;
            }
            stop = start + DAY_ZERO_EXIT;
        }
        let age = r.age + AGE_CENTRE;
        let fixed = vec![
            ((45.0..60.0).contains(&age)) as u8 as f64,
            (age >= 60.0) as u8 as f64,
            r.year,
            r.surgery,
        ];
        records.push(SurvivalRecord {
            id: r.id.clone(),
            start: start / DAYS_PER_YEAR,
            stop: stop / DAYS_PER_YEAR,
            status: r.event,
            fixed,
            td: vec![r.transplant],
        });
    }
    Dataset::build(
        records,
        FIXED.iter().map(|s| s.to_string()).collect(),
        TIME_DEPENDENT.iter().map(|s| s.to_string()).collect(),
    )
}

/// The prepared Stanford dataset from the bundled source table.
pub fn stanford_heart() -> Dataset {
    prepare_heart(RAW_CSV.as_bytes()).expect("bundled heart data is valid")
}
