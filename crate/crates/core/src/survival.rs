//! Counting-process survival data, Kaplan–Meier, and horizon restriction.

use std::collections::HashMap;
use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("empty input")]
    EmptyInput,
    #[error("subject {0}: overlapping intervals")]
    OverlappingIntervals(String),
    #[error("subject {0}: gap in follow-up")]
    GapInFollowUp(String),
    #[error("subject {0}: event flagged on a non-terminal row")]
    EventNotTerminal(String),
    #[error("subject {0}: fixed covariates differ between rows")]
    InconsistentFixedCovariates(String),
    #[error("subject {0}: interval must satisfy 0 <= start < stop")]
    InvalidInterval(String),
    #[error("subject {0}: row has {1} covariates, expected {2}")]
    CovariateCount(String, usize, usize),
    #[error("no events")]
    NoEvents,
    #[error("tau = {0} out of range")]
    TauOutOfRange(f64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown covariate column `{0}`")]
    UnknownColumn(String),
    #[error("io: {0}")]
    Io(String),
}

/// One counting-process row (start, stop] of a subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub id: String,
    pub start: f64,
    pub stop: f64,
    pub status: bool,
    pub fixed: Vec<f64>,
    pub td: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub stop: f64,
    pub status: bool,
    pub td: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub fixed: Vec<f64>,
    pub intervals: Vec<Interval>,
}

impl Subject {
    /// Observed time U.
    pub fn exit(&self) -> f64 {
        self.intervals.last().map_or(0.0, |r| r.stop)
    }

    pub fn died(&self) -> bool {
        self.intervals.last().is_some_and(|r| r.status)
    }

    /// Row covering `t` in the (start, stop] sense; t <= 0 maps to the first row
    /// and t beyond follow-up to the last one.
    pub fn row_at(&self, t: f64) -> &Interval {
        let i = self.intervals.partition_point(|r| r.stop < t);
        &self.intervals[i.min(self.intervals.len() - 1)]
    }

    pub fn records(&self) -> impl Iterator<Item = SurvivalRecord> + '_ {
        self.intervals.iter().map(|r| SurvivalRecord {
            id: self.id.clone(),
            start: r.start,
            stop: r.stop,
            status: r.status,
            fixed: self.fixed.clone(),
            td: r.td.clone(),
        })
    }
}

/// Validated counting-process dataset; subjects keep first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<Subject>,
    fixed_names: Vec<String>,
    td_names: Vec<String>,
}

impl Dataset {
    /// Validates rows and groups them by subject. Requires at least one event.
    pub fn build(
        records: Vec<SurvivalRecord>,
        fixed_names: Vec<String>,
        td_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::EmptyInput);
        }
        let (p, q) = (fixed_names.len(), td_names.len());
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut groups: Vec<Vec<SurvivalRecord>> = Vec::new();
        for rec in records {
            if rec.fixed.len() != p {
                return Err(DataError::CovariateCount(rec.id, rec.fixed.len(), p));
            }
            if rec.td.len() != q {
                return Err(DataError::CovariateCount(rec.id, rec.td.len(), q));
            }
            let k = *index.entry(rec.id.clone()).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[k].push(rec);
        }

        let mut subjects = Vec::with_capacity(groups.len());
        for mut rows in groups {
            rows.sort_by(|a, b| a.start.total_cmp(&b.start));
            let id = rows[0].id.clone();
            let fixed = rows[0].fixed.clone();
            let mut intervals: Vec<Interval> = Vec::with_capacity(rows.len());
            for (k, r) in rows.into_iter().enumerate() {
                if !(r.start >= 0.0 && r.start < r.stop && r.stop.is_finite()) {
                    return Err(DataError::InvalidInterval(id));
                }
                if r.fixed != fixed {
                    return Err(DataError::InconsistentFixedCovariates(id));
                }
                match intervals.last() {
                    None if r.start != 0.0 => return Err(DataError::GapInFollowUp(id)),
                    Some(prev) if r.start < prev.stop => {
                        return Err(DataError::OverlappingIntervals(id))
                    }
                    Some(prev) if r.start > prev.stop => return Err(DataError::GapInFollowUp(id)),
                    _ => {}
                }
                if k > 0 && intervals[k - 1].status {
                    return Err(DataError::EventNotTerminal(id));
                }
                intervals.push(Interval { start: r.start, stop: r.stop, status: r.status, td: r.td });
            }
            subjects.push(Subject { id, fixed, intervals });
        }
        let data = Dataset { subjects, fixed_names, td_names };
        if data.n_events() == 0 {
            return Err(DataError::NoEvents);
        }
        Ok(data)
    }

    /// Assembles already-validated subjects (e.g. a subset of another dataset).
    /// No event requirement is imposed.
    pub fn from_subjects(subjects: Vec<Subject>, fixed_names: Vec<String>, td_names: Vec<String>) -> Self {
        Dataset { subjects, fixed_names, td_names }
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }
    pub fn n_rows(&self) -> usize {
        self.subjects.iter().map(|s| s.intervals.len()).sum()
    }
    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.died()).count()
    }
    pub fn p(&self) -> usize {
        self.fixed_names.len()
    }
    pub fn q(&self) -> usize {
        self.td_names.len()
    }
    pub fn fixed_names(&self) -> &[String] {
        &self.fixed_names
    }
    pub fn td_names(&self) -> &[String] {
        &self.td_names
    }
    pub fn max_stop(&self) -> f64 {
        self.subjects.iter().map(Subject::exit).fold(0.0, f64::max)
    }

    pub fn records(&self) -> impl Iterator<Item = SurvivalRecord> + '_ {
        self.subjects.iter().flat_map(Subject::records)
    }

    /// Keeps the named columns. Dropping time-dependent columns merges rows that
    /// become indistinguishable, so a q = 0 selection yields one row per subject.
    pub fn select(&self, fixed: &[&str], td: &[&str]) -> Result<Dataset, DataError> {
        let pick = |names: &[String], want: &[&str]| -> Result<Vec<usize>, DataError> {
            want.iter()
                .map(|w| {
                    names.iter().position(|n| n == w).ok_or_else(|| DataError::UnknownColumn(w.to_string()))
                })
                .collect()
        };
        let fi = pick(&self.fixed_names, fixed)?;
        let ti = pick(&self.td_names, td)?;
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                let mut intervals: Vec<Interval> = Vec::new();
                for r in &s.intervals {
                    let z: Vec<f64> = ti.iter().map(|&k| r.td[k]).collect();
                    match intervals.last_mut() {
                        Some(prev) if prev.td == z => {
                            prev.stop = r.stop;
                            prev.status = r.status;
                        }
                        _ => intervals.push(Interval { start: r.start, stop: r.stop, status: r.status, td: z }),
                    }
                }
                Subject { id: s.id.clone(), fixed: fi.iter().map(|&k| s.fixed[k]).collect(), intervals }
            })
            .collect();
        Ok(Dataset {
            subjects,
            fixed_names: fixed.iter().map(|s| s.to_string()).collect(),
            td_names: td.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Same data with every time-dependent column removed.
    pub fn without_td(&self) -> Dataset {
        let fixed: Vec<&str> = self.fixed_names.iter().map(String::as_str).collect();
        self.select(&fixed, &[]).expect("own columns")
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
            fixed_names: self.fixed_names.clone(),
            td_names: self.td_names.clone(),
        }
    }
}

/// Reads `id,start,stop,status,<covariates…>`; columns listed in `td_columns`
/// are time-dependent, the rest fixed.
pub fn read_csv<R: Read>(reader: R, td_columns: &[&str]) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse { line: 1, msg: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let expect = ["id", "start", "stop", "status"];
    if header.len() < 4 || header[..4] != expect {
        return Err(DataError::Parse { line: 1, msg: "header must begin with id,start,stop,status".into() });
    }
    for c in td_columns {
        if !header[4..].iter().any(|h| h == c) {
            return Err(DataError::UnknownColumn(c.to_string()));
        }
    }
    let is_td: Vec<bool> = header[4..].iter().map(|h| td_columns.contains(&h.as_str())).collect();
    let fixed_names: Vec<String> =
        header[4..].iter().zip(&is_td).filter(|(_, &t)| !t).map(|(h, _)| h.clone()).collect();
    let td_names: Vec<String> =
        header[4..].iter().zip(&is_td).filter(|(_, &t)| t).map(|(h, _)| h.clone()).collect();

    let mut records = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| DataError::Parse { line, msg: e.to_string() })?;
        if row.len() != header.len() {
            return Err(DataError::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        let num = |j: usize| -> Result<f64, DataError> {
            row[j].parse::<f64>().map_err(|_| DataError::Parse {
                line,
                msg: format!("column `{}`: cannot parse `{}`", header[j], &row[j]),
            })
        };
        let status = match &row[3] {
            "1" => true,
            "0" => false,
            s => return Err(DataError::Parse { line, msg: format!("status must be 0 or 1, found `{s}`") }),
        };
        let (mut fixed, mut td) = (Vec::new(), Vec::new());
        for (j, &t) in is_td.iter().enumerate() {
            let v = num(j + 4)?;
            if t { td.push(v) } else { fixed.push(v) }
        }
        records.push(SurvivalRecord { id: row[0].to_string(), start: num(1)?, stop: num(2)?, status, fixed, td });
    }
    Dataset::build(records, fixed_names, td_names)
}

/// Writes the CSV format read by [`read_csv`] (fixed columns first). Values use
/// the shortest representation that round-trips exactly.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<(), DataError> {
    let io = |e: csv::Error| DataError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "start".into(), "stop".into(), "status".into()];
    header.extend(data.fixed_names.iter().cloned());
    header.extend(data.td_names.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for r in data.records() {
        let mut row = vec![r.id.clone(), r.start.to_string(), r.stop.to_string(), (r.status as u8).to_string()];
        row.extend(r.fixed.iter().chain(&r.td).map(f64::to_string));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))
}

/// Right-continuous step function.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub value_before_first_knot: f64,
}

impl StepFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self.knots.partition_point(|&k| k <= t) {
            0 => self.value_before_first_knot,
            i => self.values[i - 1],
        }
    }

    /// Left limit f(t−).
    pub fn eval_left(&self, t: f64) -> f64 {
        match self.knots.partition_point(|&k| k < t) {
            0 => self.value_before_first_knot,
            i => self.values[i - 1],
        }
    }

    /// ∫₀^τ f(t) dt.
    pub fn integrate(&self, tau: f64) -> f64 {
        let mut area = 0.0;
        let mut prev_t = 0.0;
        let mut prev_v = self.value_before_first_knot;
        for (&k, &v) in self.knots.iter().zip(&self.values) {
            if k >= tau {
                break;
            }
            area += prev_v * (k - prev_t);
            prev_t = k;
            prev_v = v;
        }
        area + prev_v * (tau - prev_t)
    }
}

/// Product-limit estimate on subject-level (U, Δ). With `use_censoring_as_event`
/// the statuses are flipped; a death tied with a censoring leaves the risk set
/// first, so it is not at risk of being censored at that time.
pub fn kaplan_meier(data: &Dataset, use_censoring_as_event: bool) -> Result<StepFunction, DataError> {
    let mut obs: Vec<(f64, bool)> = data.subjects.iter().map(|s| (s.exit(), s.died())).collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = obs.len();
    let (mut knots, mut values) = (Vec::new(), Vec::new());
    // Between removals without an event the product telescopes, so each
    // censoring-free run is evaluated as one ratio; with no censoring the
    // estimate is exactly the empirical survival function.
    let (mut base, mut run_risk, mut run_events) = (1.0, n, 0usize);
    let mut i = 0;
    while i < n {
        let t = obs[i].0;
        let mut j = i;
        let (mut deaths, mut cens) = (0usize, 0usize);
        while j < n && obs[j].0 == t {
            if obs[j].1 { deaths += 1 } else { cens += 1 }
            j += 1;
        }
        let (events, before, after) = if use_censoring_as_event { (cens, deaths, 0) } else { (deaths, 0, cens) };
        if before > 0 {
            base *= (run_risk - run_events) as f64 / run_risk as f64;
            run_risk = n - i - before;
            run_events = 0;
        }
        if events > 0 {
            run_events += events;
            knots.push(t);
            values.push(base * (run_risk - run_events) as f64 / run_risk as f64);
        }
        if after > 0 {
            base *= (run_risk - run_events) as f64 / run_risk as f64;
            run_risk = n - j;
            run_events = 0;
        }
        i = j;
    }
    if knots.is_empty() {
        return Err(DataError::NoEvents);
    }
    Ok(StepFunction { knots, values, value_before_first_knot: 1.0 })
}

/// Per-subject restricted time Y = min(U, τ) and completeness flag Δ̃.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedView {
    pub tau: f64,
    pub y: Vec<f64>,
    pub delta_tilde: Vec<bool>,
}

/// Any finite τ > 0 is accepted, including horizons past the last follow-up
/// time, where Y = U and Δ̃ = Δ.
pub fn restrict(data: &Dataset, tau: f64) -> Result<RestrictedView, DataError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(DataError::TauOutOfRange(tau));
    }
    let (y, delta_tilde) = data
        .subjects
        .iter()
        .map(|s| {
            let u = s.exit();
            (u.min(tau), s.died() || u >= tau)
        })
        .unzip();
    Ok(RestrictedView { tau, y, delta_tilde })
}

impl RestrictedView {
    pub fn restrict(&self, tau: f64) -> Result<RestrictedView, DataError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(DataError::TauOutOfRange(tau));
        }
        let (y, delta_tilde) = self
            .y
            .iter()
            .zip(&self.delta_tilde)
            .map(|(&y, &d)| (y.min(tau), d || y >= tau))
            .unzip();
        Ok(RestrictedView { tau, y, delta_tilde })
    }
}
