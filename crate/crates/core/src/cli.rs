//! Command implementations behind the `rmst-td` binary. Each command reads its
//! inputs, writes reports atomically into an output directory together with a
//! run manifest, and returns what it wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cox::{cox_summary, fit_cox, nagelkerke_r2, CoxError, CoxOptions, CovariateSelector, EventDefinition, Ties};
use crate::eval::{repeated_evaluation, EvalError, EvalOptions, EvaluationSummary, ModelKind};
use crate::model_file::{ModelFile, ModelFileError};
use crate::report::{self, ReportSet, RunManifest};
use crate::rmst::{fit_model, predict_rmst, GridPolicy, Link, Prediction, RmstError, RmstOptions, WeightScheme};
use crate::sim::{self, SimConfig, SimError};
use crate::survival::{read_csv, DataError, Dataset};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Data { path: String, source: DataError },
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error(transparent)]
    Rmst(#[from] RmstError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error("{0}")]
    Io(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Where the data lives and how to read it.
#[derive(Debug, Clone)]
pub struct DataSpec {
    pub path: PathBuf,
    pub schema_td: Vec<String>,
    /// optional subset of covariate columns to keep
    pub covariates: Option<Vec<String>>,
}

pub fn load_data(spec: &DataSpec, manifest: &mut RunManifest) -> Result<Dataset, CliError> {
    let bytes = manifest.input(&spec.path).map_err(io_err(&spec.path))?;
    let td: Vec<&str> = spec.schema_td.iter().map(String::as_str).collect();
    let wrap = |source| CliError::Data { path: spec.path.display().to_string(), source };
    let data = read_csv(bytes.as_slice(), &td).map_err(wrap)?;
    match &spec.covariates {
        None => Ok(data),
        Some(keep) => {
            let fixed: Vec<&str> =
                data.fixed_names().iter().filter(|n| keep.contains(n)).map(String::as_str).collect();
            let tdk: Vec<&str> = data.td_names().iter().filter(|n| keep.contains(n)).map(String::as_str).collect();
            if let Some(missing) = keep.iter().find(|k| !fixed.contains(&k.as_str()) && !tdk.contains(&k.as_str())) {
                return Err(wrap(DataError::UnknownColumn(missing.clone())));
            }
            data.select(&fixed, &tdk).map_err(wrap)
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitRequest {
    pub data: DataSpec,
    pub model: ModelKind,
    pub tau: Option<f64>,
    pub link: Link,
    pub grid_policy: GridPolicy,
    pub weight_scheme: WeightScheme,
    pub max_weight: Option<f64>,
    pub ties: Ties,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub table: String,
    pub diagnostics: String,
    pub r2: f64,
    pub model: ModelFile,
    pub files: Vec<PathBuf>,
}

fn ties_name(t: Ties) -> &'static str {
    match t {
        Ties::Breslow => "breslow",
        Ties::Efron => "efron",
    }
}

pub fn parse_ties(s: &str) -> Result<Ties, String> {
    match s {
        "breslow" => Ok(Ties::Breslow),
        "efron" => Ok(Ties::Efron),
        _ => Err(format!("unknown ties `{s}` (expected breslow or efron)")),
    }
}

/// Fits one model; writes `coefficients.csv`, `diagnostics.txt`, `model.txt`.
pub fn cmd_fit(req: &FitRequest) -> Result<FitOutcome, CliError> {
    let mut manifest = RunManifest::new("fit");
    let data = load_data(&req.data, &mut manifest)?;
    manifest.config = vec![
        ("model".into(), req.model.to_string()),
        ("schema_td".into(), req.data.schema_td.join(",")),
    ];
    if let Some(c) = &req.data.covariates {
        manifest.config.push(("covariates".into(), c.join(",")));
    }
    let mut diag = String::new();
    let _ = writeln!(diag, "model = {}", req.model);
    let _ = writeln!(diag, "n_subjects = {}", data.n_subjects());
    let _ = writeln!(diag, "n_events = {}", data.n_events());

    let (table, r2, model) = match req.model {
        ModelKind::TCox => {
            manifest.config.push(("ties".into(), ties_name(req.ties).into()));
            let fit = fit_cox(
                &data,
                CovariateSelector::All,
                EventDefinition::Outcome,
                CoxOptions { ties: req.ties, ..CoxOptions::default() },
            )?;
            let r2 = nagelkerke_r2(&fit)?;
            let _ = writeln!(diag, "n_rows = {}", fit.n_rows);
            let _ = writeln!(diag, "ties = {}", ties_name(req.ties));
            let _ = writeln!(diag, "log_likelihood = {}", fit.log_likelihood);
            let _ = writeln!(diag, "null_log_likelihood = {}", fit.null_log_likelihood);
            let _ = writeln!(diag, "iterations = {}", fit.iterations);
            let _ = writeln!(diag, "converged = {}", fit.converged);
            let _ = writeln!(diag, "r2 = {r2}");
            let table = report::cox_table(&cox_summary(&fit)?);
            (table, r2, ModelFile::from_cox(&fit, data.fixed_names(), data.td_names()))
        }
        ModelKind::TRmst | ModelKind::FRmst => {
            let tau = req.tau.ok_or_else(|| CliError::Usage("--tau is required for RMST models".into()))?;
            let data = if req.model == ModelKind::FRmst { data.without_td() } else { data };
            let opts = RmstOptions {
                tau,
                link: req.link,
                grid_policy: req.grid_policy,
                weight_scheme: req.weight_scheme,
                max_weight: req.max_weight,
            };
            manifest.config.extend([
                ("tau".into(), tau.to_string()),
                ("link".into(), req.link.to_string()),
                ("grid_policy".into(), req.grid_policy.to_string()),
                ("weight_scheme".into(), req.weight_scheme.to_string()),
                ("max_weight".into(), req.max_weight.map_or("none".into(), |w| w.to_string())),
            ]);
            let m = fit_model(&data, &opts)?;
            let _ = writeln!(diag, "tau = {tau}");
            let _ = writeln!(diag, "link = {}", req.link);
            let _ = writeln!(diag, "grid_policy = {}", req.grid_policy);
            let _ = writeln!(diag, "weight_scheme = {}", req.weight_scheme);
            let _ = writeln!(diag, "df = {}", m.fit.df);
            let _ = writeln!(diag, "iterations = {}", m.fit.iterations);
            let _ = writeln!(diag, "converged = {}", m.fit.converged);
            let _ = writeln!(diag, "r2 = {}", m.r2);
            let table = report::rmst_table(&m.fit);
            let file = ModelFile::from_rmst(req.model, &m.fit, data.fixed_names(), data.td_names(), req.weight_scheme);
            (table, m.r2, file)
        }
    };
    let mut set = ReportSet::new(&req.out);
    set.add("coefficients.csv", table.clone());
    set.add("diagnostics.txt", diag.clone());
    set.add("model.txt", model.render());
    let files = set.write(manifest).map_err(io_err(&req.out))?;
    Ok(FitOutcome { table, diagnostics: diag, r2, model, files })
}

/// Predicts μ̂(τ) for a covariate profile given by name.
pub fn cmd_predict(model_path: &Path, profile: &[(String, f64)]) -> Result<Prediction, CliError> {
    let text = std::fs::read_to_string(model_path).map_err(io_err(model_path))?;
    let file = ModelFile::parse(&text)?;
    let fit = file.rmst_fit()?;
    let required: Vec<&String> = file.fixed.iter().chain(&file.time_dependent).collect();
    let mut values = Vec::with_capacity(required.len());
    let mut missing = Vec::new();
    for name in &required {
        match profile.iter().find(|(k, _)| k == *name) {
            Some((_, v)) => values.push(*v),
            None => missing.push(name.as_str()),
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Usage(format!(
            "missing covariate values for: {} (required: {})",
            missing.join(", "),
            required.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    if let Some((k, _)) = profile.iter().find(|(k, _)| !required.contains(&k)) {
        return Err(CliError::Usage(format!("unknown covariate `{k}`")));
    }
    Ok(predict_rmst(&fit, &values)?)
}

pub fn format_prediction(p: &Prediction) -> String {
    format!("{:.3} [{:.3}, {:.3}]", p.mu, p.ci_low, p.ci_high)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Coefficients,
    Prediction,
}

impl std::str::FromStr for Study {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "coefficients" => Ok(Study::Coefficients),
            "prediction" => Ok(Study::Prediction),
            _ => Err(format!("unknown study `{s}` (expected coefficients or prediction)")),
        }
    }
}

/// Expands `n` and `target_censoring` lists (comma-separated) into one config
/// per table cell.
pub fn study_cells(text: &str) -> Result<Vec<SimConfig>, CliError> {
    let mut base = Vec::new();
    let mut ns = vec![None];
    let mut cens = vec![None];
    for line in text.lines() {
        let body = line.split('#').next().unwrap_or("").trim();
        match body.split_once('=') {
            Some((k, v)) if k.trim() == "n" => ns = v.split(',').map(|s| Some(s.trim().to_string())).collect(),
            Some((k, v)) if k.trim() == "target_censoring" => {
                cens = v.split(',').map(|s| Some(s.trim().to_string())).collect()
            }
            _ => base.push(line.to_string()),
        }
    }
    let mut cells = Vec::new();
    for n in &ns {
        for c in &cens {
            let mut t = base.join("\n");
            if let Some(n) = n {
                let _ = write!(t, "\nn = {n}");
            }
            if let Some(c) = c {
                let _ = write!(t, "\ntarget_censoring = {c}");
            }
            cells.push(SimConfig::parse(&t)?);
        }
    }
    Ok(cells)
}

/// Runs a simulation study from a key = value config file.
pub fn cmd_simulate(
    config: &Path,
    study: Study,
    seed: Option<u64>,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let mut manifest = RunManifest::new(match study {
        Study::Coefficients => "simulate coefficients",
        Study::Prediction => "simulate prediction",
    });
    let text = String::from_utf8(manifest.input(config).map_err(io_err(config))?)
        .map_err(|_| CliError::Usage("config is not UTF-8".into()))?;
    let mut cells = study_cells(&text)?;
    if let Some(s) = seed {
        cells.iter_mut().for_each(|c| c.seed = s);
    }
    manifest.seed = cells.first().map(|c| c.seed);
    for (k, cell) in cells.iter().enumerate() {
        manifest.config.extend(sim::config_map(cell).into_iter().map(|(key, v)| (format!("cell{k}.{key}"), v)));
    }
    let mut set = ReportSet::new(out);
    match study {
        Study::Coefficients => {
            let mut reports = Vec::new();
            let mut dumps = Vec::new();
            let mut truths: Vec<(f64, f64, usize, Vec<f64>)> = Vec::new();
            for cell in &cells {
                // the truth depends on the generator, not on n or censoring
                let truth = match truths.iter().find(|t| t.0 == cell.beta_td && t.1 == cell.beta_fixed && t.2 == cell.big_n) {
                    Some(t) => t.3.clone(),
                    None => {
                        let t = sim::true_coefficients(cell, cell.big_n)?;
                        truths.push((cell.beta_td, cell.beta_fixed, cell.big_n, t.clone()));
                        t
                    }
                };
                let (rep, recs) = sim::run_coefficient_study(cell, &truth)?;
                dumps.push((cell.n, cell.target_censoring, recs));
                reports.push(rep);
            }
            set.add("table1.csv", report::table1(&reports));
            let cells: Vec<(usize, f64, &[sim::ReplicateRecord])> =
                dumps.iter().map(|(n, c, r)| (*n, *c, r.as_slice())).collect();
            set.add("replicates.csv", report::replicate_dump(&cells, &sim::coefficient_names()));
        }
        Study::Prediction => {
            let reports = cells.iter().map(sim::run_prediction_study).collect::<Result<Vec<_>, _>>()?;
            set.add("table2.csv", report::table2(&reports));
        }
    }
    set.write(manifest).map_err(io_err(out))
}

#[derive(Debug, Clone)]
pub struct EvaluateRequest {
    pub data: DataSpec,
    pub models: Vec<ModelKind>,
    pub fraction: f64,
    pub repeats: usize,
    pub seed: u64,
    pub tau: f64,
    pub link: Link,
    pub grid_policy: GridPolicy,
    pub weight_scheme: WeightScheme,
    pub max_weight: Option<f64>,
    pub ties: Ties,
    pub out: PathBuf,
}

pub fn cmd_evaluate(req: &EvaluateRequest) -> Result<(EvaluationSummary, Vec<PathBuf>), CliError> {
    if req.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    if req.models.is_empty() {
        return Err(CliError::Usage("--models must name at least one model".into()));
    }
    let mut manifest = RunManifest::new("evaluate");
    let data = load_data(&req.data, &mut manifest)?;
    manifest.seed = Some(req.seed);
    manifest.config = vec![
        ("models".into(), req.models.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")),
        ("schema_td".into(), req.data.schema_td.join(",")),
        ("fraction".into(), req.fraction.to_string()),
        ("repeats".into(), req.repeats.to_string()),
        ("tau".into(), req.tau.to_string()),
        ("link".into(), req.link.to_string()),
        ("grid_policy".into(), req.grid_policy.to_string()),
        ("weight_scheme".into(), req.weight_scheme.to_string()),
        ("ties".into(), ties_name(req.ties).into()),
    ];
    let opts = EvalOptions {
        rmst: RmstOptions {
            tau: req.tau,
            link: req.link,
            grid_policy: req.grid_policy,
            weight_scheme: req.weight_scheme,
            max_weight: req.max_weight,
        },
        ties: req.ties,
        ..EvalOptions::default()
    };
    let summary = repeated_evaluation(&data, &req.models, req.fraction, req.repeats, req.seed, &opts);
    if summary.repeats_used == 0 {
        return Err(CliError::Eval(EvalError::DegenerateSplit));
    }
    let mut set = ReportSet::new(&req.out);
    set.add("table4.csv", report::table4(&summary));
    let files = set.write(manifest).map_err(io_err(&req.out))?;
    Ok((summary, files))
}

/// Thread pool honouring `RMST_TD_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("RMST_TD_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::Usage(format!("RMST_TD_THREADS: cannot parse `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Io(e.to_string()))
}
