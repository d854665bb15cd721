//! Concordance, IPCW prediction error, and train/test evaluation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cox::{fit_cox, CoxError, CoxOptions, CovariateSelector, EventDefinition, Ties};
use crate::rmst::{fit_model, RmstError, RmstOptions};
use crate::survival::{restrict, Dataset, RestrictedView, Subject};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no usable pairs")]
    NoUsablePairs,
    #[error("all test subjects censored")]
    AllCensored,
    #[error("split leaves a side without events")]
    DegenerateSplit,
    #[error("fraction must lie in (0, 1)")]
    BadFraction,
    #[error("non-finite prediction")]
    NonFinitePrediction,
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error(transparent)]
    Rmst(#[from] RmstError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// larger score = longer expected survival (RMST predictions)
    HigherIsLonger,
    /// larger score = higher hazard (Cox linear predictor)
    HigherIsRiskier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concordance {
    pub c_index: f64,
    pub usable_pairs: usize,
}

/// Harrell's C. A pair is usable when the shorter observed time is an event;
/// equal times count when exactly the event is first under the
/// event-before-censoring convention. Score ties count one half.
pub fn c_index(
    scores: &[f64],
    times: &[f64],
    events: &[bool],
    orientation: Orientation,
) -> Result<Concordance, EvalError> {
    let n = scores.len();
    let (mut num, mut pairs) = (0.0, 0usize);
    for i in 0..n {
        if !events[i] {
            continue;
        }
        for j in 0..n {
            let later = times[j] > times[i] || (times[j] == times[i] && !events[j]);
            if i == j || !later {
                continue;
            }
            pairs += 1;
            // i failed first: concordant when i is predicted worse
            let worse = match orientation {
                Orientation::HigherIsLonger => scores[j] - scores[i],
                Orientation::HigherIsRiskier => scores[i] - scores[j],
            };
            if worse > 0.0 {
                num += 1.0;
            } else if worse == 0.0 {
                num += 0.5;
            }
        }
    }
    if pairs == 0 {
        return Err(EvalError::NoUsablePairs);
    }
    Ok(Concordance { c_index: num / pairs as f64, usable_pairs: pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorKind {
    #[default]
    Absolute,
    Squared,
}

/// Σ Δ̃ᵢWᵢ|Yᵢ − μ̂ᵢ| / Σ Δ̃ᵢWᵢ (or the squared deviation).
pub fn prediction_error(
    mu_hat: &[f64],
    view: &RestrictedView,
    weights: &[f64],
    kind: ErrorKind,
) -> Result<f64, EvalError> {
    if mu_hat.iter().any(|m| !m.is_finite()) {
        return Err(EvalError::NonFinitePrediction);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..mu_hat.len() {
        if view.delta_tilde[i] {
            let d = view.y[i] - mu_hat[i];
            num += weights[i] * match kind {
                ErrorKind::Absolute => d.abs(),
                ErrorKind::Squared => d * d,
            };
            den += weights[i];
        }
    }
    if den == 0.0 {
        return Err(EvalError::AllCensored);
    }
    Ok(num / den)
}

/// Subject-level random partition; round(fraction·n) subjects train.
pub fn train_test_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), EvalError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::BadFraction);
    }
    let n = data.n_subjects();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let k = (fraction * n as f64).round() as usize;
    let (mut a, mut b) = (idx[..k].to_vec(), idx[k..].to_vec());
    a.sort_unstable();
    b.sort_unstable();
    let (train, test) = (data.subset(&a), data.subset(&b));
    if train.n_events() == 0 || test.n_events() == 0 {
        return Err(EvalError::DegenerateSplit);
    }
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TCox,
    TRmst,
    FRmst,
}

impl ModelKind {
    pub fn predicts_rmst(self) -> bool {
        self != ModelKind::TCox
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::TCox => "t-cox",
            ModelKind::TRmst => "t-rmst",
            ModelKind::FRmst => "f-rmst",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "t-cox" => Ok(ModelKind::TCox),
            "t-rmst" => Ok(ModelKind::TRmst),
            "f-rmst" => Ok(ModelKind::FRmst),
            _ => Err(format!("unknown model `{s}` (expected t-cox, t-rmst or f-rmst)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub rmst: RmstOptions,
    pub ties: Ties,
    pub error: ErrorKind,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { rmst: RmstOptions::new(crate::sim::ADMIN_HORIZON), ties: Ties::Efron, error: ErrorKind::Absolute }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: ModelKind,
    pub c_index: f64,
    pub prediction_error: Option<f64>,
    pub n_test: usize,
    pub n_usable_pairs: usize,
}

fn outcomes(test: &Dataset) -> (Vec<f64>, Vec<bool>) {
    test.subjects().iter().map(|s| (s.exit(), s.died())).unzip()
}

/// Fits each model on `train` and scores it on `test`. Test subjects are scored
/// with the covariates in force at min(U, τ).
pub fn evaluate_split(
    train: &Dataset,
    test: &Dataset,
    models: &[ModelKind],
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>, EvalError> {
    let (times, events) = outcomes(test);
    let view = restrict(test, opts.rmst.tau).map_err(RmstError::from)?;
    models
        .iter()
        .map(|&model| {
            let (scores, orientation, pe) = match model {
                ModelKind::TCox => {
                    let fit = fit_cox(
                        train,
                        CovariateSelector::All,
                        EventDefinition::Outcome,
                        CoxOptions { ties: opts.ties, ..CoxOptions::default() },
                    )?;
                    let scores = test
                        .subjects()
                        .iter()
                        .map(|s| {
                            let z = &s.row_at(s.exit().min(opts.rmst.tau)).td;
                            let x: Vec<f64> = s.fixed.iter().chain(z).copied().collect();
                            fit.risk_score(&x)
                        })
                        .collect::<Vec<_>>();
                    (scores, Orientation::HigherIsRiskier, None)
                }
                ModelKind::TRmst | ModelKind::FRmst => {
                    let (tr, te) = if model == ModelKind::FRmst {
                        (train.without_td(), test.without_td())
                    } else {
                        (train.clone(), test.clone())
                    };
                    let m = fit_model(&tr, &opts.rmst)?;
                    let mu: Vec<f64> = te.subjects().iter().map(|s| m.fit.predict_subject(s)).collect();
                    let w: Vec<f64> =
                        te.subjects().iter().zip(&view.y).map(|(s, &y): (&Subject, _)| m.weights.weight(s, y)).collect();
                    let pe = prediction_error(&mu, &view, &w, opts.error)?;
                    (mu, Orientation::HigherIsLonger, Some(pe))
                }
            };
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(EvalError::NonFinitePrediction);
            }
            let c = c_index(&scores, &times, &events, orientation)?;
            Ok(EvalReport {
                model,
                c_index: c.c_index,
                prediction_error: pe,
                n_test: test.n_subjects(),
                n_usable_pairs: c.usable_pairs,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub model: ModelKind,
    pub c_index: f64,
    pub prediction_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSummary {
    pub rows: Vec<EvaluationRow>,
    pub repeats: usize,
    pub repeats_used: usize,
    pub failed_repeats: usize,
    pub reseeds: usize,
}

pub const RESEED_BUDGET: usize = 10;

/// Repeated random splits; a split that is degenerate or on which a model
/// cannot be fitted is redrawn up to [`RESEED_BUDGET`] times before the repeat
/// is abandoned.
pub fn repeated_evaluation(
    data: &Dataset,
    models: &[ModelKind],
    fraction: f64,
    repeats: usize,
    seed: u64,
    opts: &EvalOptions,
) -> EvaluationSummary {
    let outcomes: Vec<(Option<Vec<EvalReport>>, usize)> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            for attempt in 0..=RESEED_BUDGET {
                let split = train_test_split(data, fraction, rng.next_u64());
                if let Ok(reports) = split.and_then(|(tr, te)| evaluate_split(&tr, &te, models, opts)) {
                    return (Some(reports), attempt);
                }
            }
            (None, RESEED_BUDGET)
        })
        .collect();
    let used: Vec<&Vec<EvalReport>> = outcomes.iter().filter_map(|(r, _)| r.as_ref()).collect();
    let m = used.len() as f64;
    let rows = models
        .iter()
        .enumerate()
        .map(|(k, &model)| EvaluationRow {
            model,
            c_index: used.iter().map(|r| r[k].c_index).sum::<f64>() / m,
            prediction_error: model.predicts_rmst().then(|| used.iter().map(|r| r[k].prediction_error.unwrap()).sum::<f64>() / m),
        })
        .collect();
    EvaluationSummary {
        rows,
        repeats,
        repeats_used: used.len(),
        failed_repeats: repeats - used.len(),
        reseeds: outcomes.iter().map(|(_, a)| a).sum(),
    }
}
