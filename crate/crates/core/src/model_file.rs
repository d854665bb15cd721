//! Versioned, line-oriented text format for fitted models.
//!
//! ```text
//! rmst-td-model 1
//! kind = t-rmst
//! tau = 4.93
//! ...
//! coefficients = 0.44,0.03,...
//! covariance.0 = ...
//! ```
//!
//! Numbers are written in shortest round-trip form, so a model read back is
//! bit-identical to the one written.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::cox::{CoxFit, Ties};
use crate::eval::ModelKind;
use crate::rmst::{GridPolicy, Link, RmstFit, WeightScheme};

pub const MAGIC: &str = "rmst-td-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelFileError {
    #[error("not a model file (missing `{MAGIC} {VERSION}` header)")]
    BadHeader,
    #[error("line {0}: expected key = value")]
    Syntax(usize),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("model kind `{found}` cannot be used here (expected {expected})")]
    ModelKindMismatch { found: String, expected: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub names: Vec<String>,
    pub fixed: Vec<String>,
    pub time_dependent: Vec<String>,
    pub coefficients: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
    pub converged: bool,
    pub rmst: Option<RmstSection>,
    pub ties: Option<Ties>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmstSection {
    pub tau: f64,
    pub link: Link,
    pub grid_policy: GridPolicy,
    pub weight_scheme: WeightScheme,
    pub df: usize,
    pub ase: Vec<f64>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl ModelFile {
    pub fn from_rmst(kind: ModelKind, fit: &RmstFit, fixed: &[String], td: &[String], scheme: WeightScheme) -> Self {
        ModelFile {
            kind,
            names: fit.names.clone(),
            fixed: fixed.to_vec(),
            time_dependent: td.to_vec(),
            coefficients: fit.eta.clone(),
            covariance: fit.covariance.clone(),
            n: fit.n,
            converged: fit.converged,
            rmst: Some(RmstSection {
                tau: fit.tau,
                link: fit.link,
                grid_policy: fit.grid_policy,
                weight_scheme: scheme,
                df: fit.df,
                ase: fit.ase.clone(),
            }),
            ties: None,
        }
    }

    pub fn from_cox(fit: &CoxFit, fixed: &[String], td: &[String]) -> Self {
        ModelFile {
            kind: ModelKind::TCox,
            names: fit.names.clone(),
            fixed: fixed.to_vec(),
            time_dependent: td.to_vec(),
            coefficients: fit.coefficients.clone(),
            covariance: fit.covariance.clone(),
            n: fit.n_subjects,
            converged: fit.converged,
            rmst: None,
            ties: Some(fit.ties),
        }
    }

    /// Rebuilds the RMST fit (prediction needs nothing else).
    pub fn rmst_fit(&self) -> Result<RmstFit, ModelFileError> {
        let r = self.rmst.as_ref().ok_or_else(|| ModelFileError::ModelKindMismatch {
            found: self.kind.to_string(),
            expected: "t-rmst or f-rmst".into(),
        })?;
        Ok(RmstFit {
            eta: self.coefficients.clone(),
            covariance: self.covariance.clone(),
            ase: r.ase.clone(),
            tau: r.tau,
            link: r.link,
            df: r.df,
            n: self.n,
            converged: self.converged,
            iterations: 0,
            grid_policy: r.grid_policy,
            names: self.names.clone(),
        })
    }

    pub fn render(&self) -> String {
        let mut s = format!("{MAGIC} {VERSION}\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("kind", self.kind.to_string());
        kv("n", self.n.to_string());
        kv("converged", self.converged.to_string());
        kv("fixed", self.fixed.join(","));
        kv("time_dependent", self.time_dependent.join(","));
        kv("names", self.names.join(","));
        if let Some(t) = self.ties {
            kv("ties", match t { Ties::Breslow => "breslow", Ties::Efron => "efron" }.into());
        }
        if let Some(r) = &self.rmst {
            kv("tau", r.tau.to_string());
            kv("link", r.link.to_string());
            kv("grid_policy", r.grid_policy.to_string());
            kv("weight_scheme", r.weight_scheme.to_string());
            kv("df", r.df.to_string());
            kv("ase", join(&r.ase));
        }
        kv("coefficients", join(&self.coefficients));
        for i in 0..self.covariance.nrows() {
            let row: Vec<f64> = self.covariance.row(i).iter().copied().collect();
            kv(&format!("covariance.{i}"), join(&row));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, ModelFileError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(&format!("{MAGIC} {VERSION}")) {
            return Err(ModelFileError::BadHeader);
        }
        let mut map = BTreeMap::new();
        for (k, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ModelFileError::Syntax(k + 2))?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let get = |key: &str| map.get(key).cloned().ok_or_else(|| ModelFileError::Missing(key.into()));
        let bad = |key: &str, msg: String| ModelFileError::Value { key: key.into(), msg };
        let list = |key: &str| -> Result<Vec<String>, ModelFileError> {
            let v = get(key)?;
            Ok(if v.is_empty() { vec![] } else { v.split(',').map(str::to_string).collect() })
        };
        let nums = |key: &str| -> Result<Vec<f64>, ModelFileError> {
            list(key)?.iter().map(|x| x.parse().map_err(|_| bad(key, format!("bad number `{x}`")))).collect()
        };
        let parse_one = |key: &str| -> Result<String, ModelFileError> { get(key) };

        let kind: ModelKind = parse_one("kind")?.parse().map_err(|m| bad("kind", m))?;
        let coefficients = nums("coefficients")?;
        let k = coefficients.len();
        let mut cov = Vec::with_capacity(k * k);
        for i in 0..k {
            let row = nums(&format!("covariance.{i}"))?;
            if row.len() != k {
                return Err(bad(&format!("covariance.{i}"), format!("expected {k} values")));
            }
            cov.extend(row);
        }
        let rmst = if kind == ModelKind::TCox {
            None
        } else {
            let key = "tau";
            Some(RmstSection {
                tau: get(key)?.parse().map_err(|_| bad(key, "bad number".into()))?,
                link: get("link")?.parse().map_err(|m| bad("link", m))?,
                grid_policy: get("grid_policy")?.parse().map_err(|m| bad("grid_policy", m))?,
                weight_scheme: get("weight_scheme")?.parse().map_err(|m| bad("weight_scheme", m))?,
                df: get("df")?.parse().map_err(|_| bad("df", "bad integer".into()))?,
                ase: nums("ase")?,
            })
        };
        let ties = match map.get("ties").map(String::as_str) {
            None => None,
            Some("breslow") => Some(Ties::Breslow),
            Some("efron") => Some(Ties::Efron),
            Some(other) => return Err(bad("ties", format!("unknown `{other}`"))),
        };
        Ok(ModelFile {
            kind,
            names: list("names")?,
            fixed: list("fixed")?,
            time_dependent: list("time_dependent")?,
            coefficients,
            covariance: DMatrix::from_row_slice(k, k, &cov),
            n: get("n")?.parse().map_err(|_| bad("n", "bad integer".into()))?,
            converged: get("converged")?.parse().map_err(|_| bad("converged", "expected true/false".into()))?,
            rmst,
            ties,
        })
    }
}
