//! Weibull data with a single time-dependent covariate jump, censoring
//! calibration, and the Monte Carlo studies built on them.
//!
//! Hazard: h(t) = λ ν t^{ν−1} exp(β′x + β_t Z(t)), Z(t) = 1{t ≥ t₀},
//! x ~ Bernoulli(p_x), t₀ ~ U(t0_low, t0_high). Event times come from inverting
//! the piecewise cumulative hazard; censoring is exponential.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::eval::{self, EvalError, EvalOptions, ModelKind};
use crate::rmst::{fit_model, GridPolicy, Link, RmstError, RmstOptions, WeightScheme};
use crate::survival::{Dataset, SurvivalRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("censoring calibration failed for target {0}")]
    CalibrationFailed(f64),
    #[error("{failed} of {total} replicates failed; last error: {last}")]
    StudyUnstable { failed: usize, total: usize, last: String },
    #[error(transparent)]
    Fit(#[from] RmstError),
}

/// Administrative end of follow-up; with no other censoring every subject dies
/// before it.
pub const ADMIN_HORIZON: f64 = 1e6;
const PILOT_N: usize = 100_000;
const PILOT_SEED: u64 = 0x5eed_ca1b;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub lambda: f64,
    pub nu_shape: f64,
    pub beta_fixed: f64,
    pub beta_td: f64,
    pub t0_low: f64,
    pub t0_high: f64,
    pub p_fixed: f64,
    pub target_censoring: f64,
    /// exponential censoring rate; calibrated from `target_censoring` when absent
    pub censoring_rate: Option<f64>,
    pub tau: f64,
    pub replicates: usize,
    pub seed: u64,
    pub big_n: usize,
    pub train_fraction: f64,
    pub link: Link,
    pub grid_policy: GridPolicy,
    pub weight_scheme: WeightScheme,
    pub max_weight: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 500,
            lambda: 0.1,
            nu_shape: 1.5,
            beta_fixed: 0.1,
            beta_td: 0.1,
            t0_low: 0.0,
            t0_high: 4.0,
            p_fixed: 0.5,
            target_censoring: 0.15,
            censoring_rate: None,
            tau: ADMIN_HORIZON,
            replicates: 1000,
            seed: 20240101,
            big_n: 200_000,
            train_fraction: 2.0 / 3.0,
            link: Link::Identity,
            grid_policy: GridPolicy::ObservedTime,
            weight_scheme: WeightScheme::TimeDependent,
            max_weight: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.lambda > 0.0) || !(self.nu_shape > 0.0) {
            return bad("lambda and nu_shape must be positive");
        }
        if !(0.0..1.0).contains(&self.target_censoring) {
            return bad("target_censoring must lie in [0, 1)");
        }
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if !(self.t0_low >= 0.0 && self.t0_high >= self.t0_low) {
            return bad("need 0 <= t0_low <= t0_high");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive and finite");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if self.censoring_rate.is_some_and(|r| !(r >= 0.0)) {
            return bad("censoring_rate must be non-negative");
        }
        Ok(())
    }

    pub fn rmst_options(&self) -> RmstOptions {
        RmstOptions {
            tau: self.tau,
            link: self.link,
            grid_policy: self.grid_policy,
            weight_scheme: self.weight_scheme,
            max_weight: self.max_weight,
        }
    }

    /// Parses flat `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut cfg = SimConfig::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SimError::Config(format!("line {}: expected key = value", k + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|m| SimError::Config(format!("line {}: {m}", k + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}`"))
        }
        fn opt(v: &str) -> Result<Option<f64>, String> {
            if v.is_empty() || v == "none" { Ok(None) } else { num(v).map(Some) }
        }
        match key {
            "n" => self.n = num(value)?,
            "lambda" => self.lambda = num(value)?,
            "nu_shape" => self.nu_shape = num(value)?,
            "beta_fixed" => self.beta_fixed = num(value)?,
            "beta_td" => self.beta_td = num(value)?,
            "t0_low" => self.t0_low = num(value)?,
            "t0_high" => self.t0_high = num(value)?,
            "p_fixed" => self.p_fixed = num(value)?,
            "target_censoring" => self.target_censoring = num(value)?,
            "censoring_rate" => self.censoring_rate = opt(value)?,
            "tau" => self.tau = num(value)?,
            "replicates" => self.replicates = num(value)?,
            "seed" => self.seed = num(value)?,
            "big_n" => self.big_n = num(value)?,
            "train_fraction" => self.train_fraction = num(value)?,
            "link" => self.link = value.parse()?,
            "grid_policy" => self.grid_policy = value.parse()?,
            "weight_scheme" => self.weight_scheme = value.parse()?,
            "max_weight" => self.max_weight = opt(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

impl fmt::Display for SimConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "lambda = {}", self.lambda)?;
        writeln!(f, "nu_shape = {}", self.nu_shape)?;
        writeln!(f, "beta_fixed = {}", self.beta_fixed)?;
        writeln!(f, "beta_td = {}", self.beta_td)?;
        writeln!(f, "t0_low = {}", self.t0_low)?;
        writeln!(f, "t0_high = {}", self.t0_high)?;
        writeln!(f, "p_fixed = {}", self.p_fixed)?;
        writeln!(f, "target_censoring = {}", self.target_censoring)?;
        writeln!(f, "censoring_rate = {}", opt(self.censoring_rate))?;
        writeln!(f, "tau = {}", self.tau)?;
        writeln!(f, "replicates = {}", self.replicates)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "big_n = {}", self.big_n)?;
        writeln!(f, "train_fraction = {}", self.train_fraction)?;
        writeln!(f, "link = {}", self.link)?;
        writeln!(f, "grid_policy = {}", self.grid_policy)?;
        writeln!(f, "weight_scheme = {}", self.weight_scheme)?;
        writeln!(f, "max_weight = {}", opt(self.max_weight))
    }
}

/// Cumulative hazard of the generating model at `t`.
pub fn cumulative_hazard(t: f64, t0: f64, x: f64, cfg: &SimConfig) -> f64 {
    let base = cfg.lambda * (cfg.beta_fixed * x).exp();
    if t < t0 {
        base * t.powf(cfg.nu_shape)
    } else {
        base * (t0.powf(cfg.nu_shape) + cfg.beta_td.exp() * (t.powf(cfg.nu_shape) - t0.powf(cfg.nu_shape)))
    }
}

/// Inverts the piecewise cumulative hazard at −log(u).
pub fn gen_survival_time(u: f64, t0: f64, x: f64, cfg: &SimConfig) -> f64 {
    let target = -u.ln();
    let base = cfg.lambda * (cfg.beta_fixed * x).exp();
    let h_t0 = base * t0.powf(cfg.nu_shape);
    if target < h_t0 {
        (target / base).powf(1.0 / cfg.nu_shape)
    } else {
        let jumped = base * cfg.beta_td.exp();
        ((target - h_t0 + jumped * t0.powf(cfg.nu_shape)) / jumped).powf(1.0 / cfg.nu_shape)
    }
}

/// Replicate-specific generator: one study seed, one stream per replicate.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

struct Draw {
    x: f64,
    t0: f64,
    t: f64,
    /// standard exponential; censoring time is e / rate
    e: f64,
}

fn draw(rng: &mut impl Rng, cfg: &SimConfig) -> Draw {
    let x = if rng.gen::<f64>() < cfg.p_fixed { 1.0 } else { 0.0 };
    let t0 = cfg.t0_low + (cfg.t0_high - cfg.t0_low) * rng.gen::<f64>();
    let u: f64 = Open01.sample(rng);
    let v: f64 = Open01.sample(rng);
    Draw { x, t0, t: gen_survival_time(u, t0, x, cfg), e: -v.ln() }
}

fn censoring_time(e: f64, rate: f64) -> f64 {
    if rate > 0.0 { (e / rate).min(ADMIN_HORIZON) } else { ADMIN_HORIZON }
}

/// Simulates `n` subjects with censoring rate `rate`.
pub fn gen_dataset_with(n: usize, rate: f64, cfg: &SimConfig, rng: &mut impl Rng) -> Dataset {
    let mut records = Vec::with_capacity(2 * n);
    for i in 0..n {
        let d = draw(rng, cfg);
        let c = censoring_time(d.e, rate);
        let (u, status) = if d.t <= c { (d.t, true) } else { (c, false) };
        let id = (i + 1).to_string();
        if u <= d.t0 {
            records.push(SurvivalRecord { id, start: 0.0, stop: u, status, fixed: vec![d.x], td: vec![0.0] });
        } else {
            records.push(SurvivalRecord {
                id: id.clone(),
                start: 0.0,
                stop: d.t0,
                status: false,
                fixed: vec![d.x],
                td: vec![0.0],
            });
            records.push(SurvivalRecord { id, start: d.t0, stop: u, status, fixed: vec![d.x], td: vec![1.0] });
        }
    }
    Dataset::build(records, vec!["x".into()], vec!["z".into()]).expect("simulated data is valid")
}

/// Dataset of `cfg.n` subjects from replicate stream 0 of `cfg.seed`.
pub fn gen_dataset(cfg: &SimConfig) -> Result<Dataset, SimError> {
    cfg.validate()?;
    let rate = resolve_rate(cfg)?;
    Ok(gen_dataset_with(cfg.n, rate, cfg, &mut replicate_rng(cfg.seed, 0)))
}

fn resolve_rate(cfg: &SimConfig) -> Result<f64, SimError> {
    match cfg.censoring_rate {
        Some(r) => Ok(r),
        None => calibrate_censoring(cfg),
    }
}

/// Bisection on the exponential rate so that the simulated censoring fraction
/// of a fixed pilot sample hits the target.
pub fn calibrate_censoring(cfg: &SimConfig) -> Result<f64, SimError> {
    let target = cfg.target_censoring;
    if target <= 0.0 {
        return Ok(0.0);
    }
    let mut rng = replicate_rng(PILOT_SEED, 0);
    let pilot: Vec<(f64, f64)> = (0..PILOT_N)
        .map(|_| {
            let d = draw(&mut rng, cfg);
            (d.t, d.e)
        })
        .collect();
    let frac = |rate: f64| {
        pilot.iter().filter(|&&(t, e)| censoring_time(e, rate) < t).count() as f64 / PILOT_N as f64
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while frac(hi) < target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(SimError::CalibrationFailed(target));
        }
    }
    let mut best = (f64::INFINITY, hi);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let f = frac(mid);
        if (f - target).abs() < best.0 {
            best = ((f - target).abs(), mid);
        }
        if (f - target).abs() < 1e-4 {
            break;
        }
        if f < target { lo = mid } else { hi = mid }
    }
    if best.0 <= 0.005 { Ok(best.1) } else { Err(SimError::CalibrationFailed(target)) }
}

/// Fits T-RMST to one uncensored sample of size `big_n`.
pub fn true_coefficients(cfg: &SimConfig, big_n: usize) -> Result<Vec<f64>, SimError> {
    cfg.validate()?;
    if big_n < 10_000 {
        return Err(SimError::Config("big_n must be at least 10^4".into()));
    }
    let data = gen_dataset_with(big_n, 0.0, cfg, &mut replicate_rng(cfg.seed, u64::MAX));
    Ok(fit_model(&data, &cfg.rmst_options())?.fit.eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimates: Vec<f64>,
    pub ase: Vec<f64>,
    pub covered: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMetrics {
    pub name: String,
    pub true_value: f64,
    pub bias: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mean_ase: f64,
    pub empirical_sd: f64,
    pub rel_se: f64,
    pub cp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    pub censoring_rate: f64,
    pub exponential_rate: f64,
    pub tau: f64,
    pub replicates: usize,
    pub failures: usize,
    pub coefficients: Vec<CoefficientMetrics>,
}

impl MetricsReport {
    /// Aggregates per-replicate results (replicate order).
    pub fn aggregate(
        names: &[String],
        truth: &[f64],
        records: &[ReplicateRecord],
        cfg: &SimConfig,
        exponential_rate: f64,
        failures: usize,
    ) -> Self {
        let m = records.len() as f64;
        let coefficients = names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let est: Vec<f64> = records.iter().map(|r| r.estimates[k]).collect();
                let mean = est.iter().sum::<f64>() / m;
                let mse = est.iter().map(|e| (e - truth[k]).powi(2)).sum::<f64>() / m;
                let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0);
                let mean_ase = records.iter().map(|r| r.ase[k]).sum::<f64>() / m;
                let sd = var.sqrt();
                CoefficientMetrics {
                    name: name.clone(),
                    true_value: truth[k],
                    bias: mean - truth[k],
                    mse,
                    rmse: mse.sqrt(),
                    mean_ase,
                    empirical_sd: sd,
                    rel_se: mean_ase / sd,
                    cp: records.iter().filter(|r| r.covered[k]).count() as f64 / m,
                }
            })
            .collect();
        MetricsReport {
            n: cfg.n,
            censoring_rate: cfg.target_censoring,
            exponential_rate,
            tau: cfg.tau,
            replicates: records.len(),
            failures,
            coefficients,
        }
    }
}

fn check_failures<T>(results: Vec<Result<T, String>>) -> Result<(Vec<T>, usize), SimError> {
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut last = String::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => last = e,
        }
    }
    let failed = total - ok.len();
    if failed * 20 > total || ok.is_empty() {
        return Err(SimError::StudyUnstable { failed, total, last });
    }
    Ok((ok, failed))
}

/// Repeated simulate → fit → compare against `truth`.
pub fn run_coefficient_study(
    cfg: &SimConfig,
    truth: &[f64],
) -> Result<(MetricsReport, Vec<ReplicateRecord>), SimError> {
    cfg.validate()?;
    let rate = resolve_rate(cfg)?;
    let opts = cfg.rmst_options();
    let results: Vec<Result<ReplicateRecord, String>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let data = gen_dataset_with(cfg.n, rate, cfg, &mut replicate_rng(cfg.seed, rep as u64));
            let fit = fit_model(&data, &opts).map_err(|e| e.to_string())?.fit;
            if !fit.converged {
                return Err("not converged".into());
            }
            let q = StudentsT::new(0.0, 1.0, fit.df as f64).unwrap().inverse_cdf(0.975);
            let covered =
                fit.eta.iter().zip(&fit.ase).zip(truth).map(|((e, se), b)| (e - b).abs() <= q * se).collect();
            Ok(ReplicateRecord { replicate: rep, estimates: fit.eta, ase: fit.ase, covered })
        })
        .collect();
    let (records, failures) = check_failures(results)?;
    let report = MetricsReport::aggregate(&coefficient_names(), truth, &records, cfg, rate, failures);
    Ok((report, records))
}

pub fn coefficient_names() -> Vec<String> {
    vec!["beta0".into(), "beta1".into(), "beta2".into()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub model: ModelKind,
    pub c_index: f64,
    pub prediction_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub n: usize,
    pub censoring_rate: f64,
    pub exponential_rate: f64,
    pub tau: f64,
    pub replicates: usize,
    pub failures: usize,
    pub rows: Vec<PredictionRow>,
}

/// Repeated simulate → split → fit T-Cox, T-RMST, F-RMST → score on test.
pub fn run_prediction_study(cfg: &SimConfig) -> Result<PredictionReport, SimError> {
    cfg.validate()?;
    let rate = resolve_rate(cfg)?;
    let models = [ModelKind::TCox, ModelKind::TRmst, ModelKind::FRmst];
    let eval_opts = EvalOptions { rmst: cfg.rmst_options(), ..EvalOptions::default() };
    let results: Vec<Result<Vec<eval::EvalReport>, String>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(cfg.seed, rep as u64);
            let data = gen_dataset_with(cfg.n, rate, cfg, &mut rng);
            let (train, test) =
                eval::train_test_split(&data, cfg.train_fraction, rng.gen()).map_err(|e: EvalError| e.to_string())?;
            eval::evaluate_split(&train, &test, &models, &eval_opts).map_err(|e| e.to_string())
        })
        .collect();
    let (reports, failures) = check_failures(results)?;
    let m = reports.len() as f64;
    let rows = models
        .iter()
        .enumerate()
        .map(|(k, &model)| PredictionRow {
            model,
            c_index: reports.iter().map(|r| r[k].c_index).sum::<f64>() / m,
            prediction_error: model
                .predicts_rmst()
                .then(|| reports.iter().map(|r| r[k].prediction_error.unwrap()).sum::<f64>() / m),
        })
        .collect();
    Ok(PredictionReport {
        n: cfg.n,
        censoring_rate: cfg.target_censoring,
        exponential_rate: rate,
        tau: cfg.tau,
        replicates: reports.len(),
        failures,
        rows,
    })
}

/// Empirical censored fraction of a dataset.
pub fn censored_fraction(data: &Dataset) -> f64 {
    1.0 - data.n_events() as f64 / data.n_subjects() as f64
}

/// Flattens key = value text into a map (used for manifests).
pub fn config_map(cfg: &SimConfig) -> BTreeMap<String, String> {
    cfg.to_string()
        .lines()
        .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_one_example() {
        let cfg = SimConfig::default();
        let t = gen_survival_time((-0.1f64).exp(), 10.0, 0.0, &cfg);
        assert!((t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_round_trip() {
        let cfg = SimConfig { censoring_rate: Some(0.05), grid_policy: GridPolicy::EventTimes, ..SimConfig::default() };
        assert_eq!(SimConfig::parse(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn zero_replicates_rejected() {
        assert!(matches!(SimConfig::parse("replicates = 0"), Err(SimError::Config(_))));
        assert!(matches!(SimConfig::parse("bogus = 1"), Err(SimError::Config(_))));
    }

    #[test]
    fn zero_target_means_no_censoring() {
        let cfg = SimConfig { target_censoring: 0.0, n: 200, ..SimConfig::default() };
        assert_eq!(calibrate_censoring(&cfg).unwrap(), 0.0);
        let d = gen_dataset(&cfg).unwrap();
        assert!(d.subjects().iter().all(|s| s.died()));
    }
}
