//! Output plumbing: atomic writes, CSV reports, run manifests.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::cox::CoxSummaryRow;
use crate::eval::EvaluationSummary;
use crate::rmst::RmstFit;
use crate::sim::{MetricsReport, PredictionReport, ReplicateRecord};

/// Writes to a temporary sibling, then renames over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn cox_table(rows: &[CoxSummaryRow]) -> String {
    csv_string(
        &["variable", "coef", "se", "hr", "ci_low", "ci_high", "p_value"],
        rows.iter().map(|r| {
            vec![
                r.name.clone(),
                r.coef.to_string(),
                r.se.to_string(),
                r.hazard_ratio.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.p_value.to_string(),
            ]
        }),
    )
}

/// RMSTd equals the coefficient; the CI is the t-based interval.
pub fn rmst_table(fit: &RmstFit) -> String {
    let ci = fit.confidence_intervals();
    let p = fit.p_values();
    csv_string(
        &["variable", "coef", "se", "rmstd", "ci_low", "ci_high", "p_value"],
        (0..fit.eta.len()).map(|k| {
            vec![
                fit.names[k].clone(),
                fit.eta[k].to_string(),
                fit.ase[k].to_string(),
                fit.eta[k].to_string(),
                ci[k].0.to_string(),
                ci[k].1.to_string(),
                p[k].to_string(),
            ]
        }),
    )
}

pub const TABLE1_HEADER: [&str; 11] =
    ["n", "censoring", "coefficient", "true", "bias", "mse", "rmse", "rel_se", "cp", "mean_ase", "empirical_sd"];

pub fn table1(reports: &[MetricsReport]) -> String {
    csv_string(
        &TABLE1_HEADER,
        reports.iter().flat_map(|r| {
            r.coefficients.iter().map(move |c| {
                vec![
                    r.n.to_string(),
                    r.censoring_rate.to_string(),
                    c.name.clone(),
                    c.true_value.to_string(),
                    c.bias.to_string(),
                    c.mse.to_string(),
                    c.rmse.to_string(),
                    c.rel_se.to_string(),
                    c.cp.to_string(),
                    c.mean_ase.to_string(),
                    c.empirical_sd.to_string(),
                ]
            })
        }),
    )
}

pub fn replicate_dump(cells: &[(usize, f64, &[ReplicateRecord])], names: &[String]) -> String {
    csv_string(
        &["n", "censoring", "replicate", "coefficient", "estimate", "ase", "covered"],
        cells.iter().flat_map(|&(n, cen, recs)| {
            recs.iter().flat_map(move |r| {
                names.iter().enumerate().map(move |(k, name)| {
                    vec![
                        n.to_string(),
                        cen.to_string(),
                        r.replicate.to_string(),
                        name.clone(),
                        r.estimates[k].to_string(),
                        r.ase[k].to_string(),
                        (r.covered[k] as u8).to_string(),
                    ]
                })
            })
        }),
    )
}

pub fn table2(reports: &[PredictionReport]) -> String {
    csv_string(
        &["n", "censoring", "model", "c_index", "prediction_error"],
        reports.iter().flat_map(|r| {
            r.rows.iter().map(move |row| {
                vec![
                    r.n.to_string(),
                    r.censoring_rate.to_string(),
                    row.model.to_string(),
                    row.c_index.to_string(),
                    opt(row.prediction_error),
                ]
            })
        }),
    )
}

pub fn table4(summary: &EvaluationSummary) -> String {
    csv_string(
        &["model", "c_index", "prediction_error", "repeats_used", "failed_repeats"],
        summary.rows.iter().map(|r| {
            vec![
                r.model.to_string(),
                r.c_index.to_string(),
                opt(r.prediction_error),
                summary.repeats_used.to_string(),
                summary.failed_repeats.to_string(),
            ]
        }),
    )
}

/// Provenance record written next to every set of reports.
#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
    pub started: u64,
    pub finished: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: unix_now(),
            ..Default::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> io::Result<Vec<u8>> {
        let bytes = fs::read(path)?;
        self.inputs.push((path.display().to_string(), sha256_hex(&bytes)));
        Ok(bytes)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# rmst-td run manifest\n");
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = {}", self.version);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k} = {v}");
        }
        for (k, v) in &self.inputs {
            let _ = writeln!(s, "input.sha256 = {v}  {k}");
        }
        for (k, v) in &self.outputs {
            let _ = writeln!(s, "output.sha256 = {v}  {k}");
        }
        let _ = writeln!(s, "started = {}", self.started);
        let _ = writeln!(s, "finished = {}", self.finished);
        s
    }
}

/// Collects report files and writes them plus `manifest.txt` into `dir`.
pub struct ReportSet {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl ReportSet {
    pub fn new(dir: &Path) -> Self {
        ReportSet { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn write(self, mut manifest: RunManifest) -> io::Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            write_atomic(&path, bytes)?;
            manifest.outputs.push((name.clone(), sha256_hex(bytes)));
            written.push(path);
        }
        manifest.finished = unix_now();
        let path = self.dir.join("manifest.txt");
        write_atomic(&path, manifest.render().as_bytes())?;
        written.push(path);
        Ok(written)
    }
}
