//! Cox proportional hazards on counting-process data.
//!
//! One engine serves the outcome model and the censoring models that feed the
//! IPCW weights. Ties use Breslow by default; Efron is available for outcome
//! models where the comparison target was fitted that way.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::linalg;
use crate::survival::{Dataset, StepFunction, Subject};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoxError {
    #[error("design is not identifiable (rank-deficient information)")]
    NonIdentifiable,
    #[error("Newton-Raphson diverged: step halving exhausted")]
    Divergence,
    #[error("no events of the requested kind")]
    NoEvents,
    #[error("fit did not converge")]
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateSelector {
    Fixed,
    TimeDependent,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventDefinition {
    Outcome,
    /// event = 1 − status on the subject's last row
    Censoring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ties {
    #[default]
    Breslow,
    Efron,
}

#[derive(Debug, Clone, Copy)]
pub struct CoxOptions {
    pub ties: Ties,
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions { ties: Ties::Breslow, tol: 1e-8, max_iter: 100, max_halvings: 20 }
    }
}

impl CovariateSelector {
    fn width(self, p: usize, q: usize) -> usize {
        match self {
            CovariateSelector::Fixed => p,
            CovariateSelector::TimeDependent => q,
            CovariateSelector::All => p + q,
        }
    }

    /// Covariates of `s` on the row covering `u`.
    pub fn covariates_at(self, s: &Subject, u: f64, out: &mut Vec<f64>) {
        out.clear();
        match self {
            CovariateSelector::Fixed => out.extend_from_slice(&s.fixed),
            CovariateSelector::TimeDependent => out.extend_from_slice(&s.row_at(u).td),
            CovariateSelector::All => {
                out.extend_from_slice(&s.fixed);
                out.extend_from_slice(&s.row_at(u).td);
            }
        }
    }

    fn names(self, data: &Dataset) -> Vec<String> {
        match self {
            CovariateSelector::Fixed => data.fixed_names().to_vec(),
            CovariateSelector::TimeDependent => data.td_names().to_vec(),
            CovariateSelector::All => data.fixed_names().iter().chain(data.td_names()).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoxFit {
    pub coefficients: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub baseline_cumhaz: StepFunction,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub n_subjects: usize,
    pub n_rows: usize,
    pub converged: bool,
    pub iterations: usize,
    pub names: Vec<String>,
    pub selector: CovariateSelector,
    pub event: EventDefinition,
    pub ties: Ties,
    increments: Vec<f64>,
}

/// Flattened design for the partial likelihood.
#[derive(Debug, Clone)]
pub struct CoxProblem {
    start: Vec<f64>,
    stop: Vec<f64>,
    event: Vec<bool>,
    /// row leaves the risk set just before its stop time (death tied with censoring)
    early_exit: Vec<bool>,
    x: Vec<f64>,
    p: usize,
    times: Vec<f64>,
    n_subjects: usize,
    names: Vec<String>,
    selector: CovariateSelector,
    definition: EventDefinition,
}

pub struct Evaluation {
    pub log_likelihood: f64,
    pub score: DVector<f64>,
    pub information: DMatrix<f64>,
}

impl CoxProblem {
    pub fn new(data: &Dataset, selector: CovariateSelector, definition: EventDefinition) -> Result<Self, CoxError> {
        let p = selector.width(data.p(), data.q());
        let mut prob = CoxProblem {
            start: vec![],
            stop: vec![],
            event: vec![],
            early_exit: vec![],
            x: vec![],
            p,
            times: vec![],
            n_subjects: data.n_subjects(),
            names: selector.names(data),
            selector,
            definition,
        };
        for s in data.subjects() {
            let last = s.intervals.len() - 1;
            for (k, r) in s.intervals.iter().enumerate() {
                prob.start.push(r.start);
                prob.stop.push(r.stop);
                let ev = match definition {
                    EventDefinition::Outcome => r.status,
                    EventDefinition::Censoring => k == last && !r.status,
                };
                prob.event.push(ev);
                prob.early_exit.push(definition == EventDefinition::Censoring && r.status);
                match selector {
                    CovariateSelector::Fixed => prob.x.extend_from_slice(&s.fixed),
                    CovariateSelector::TimeDependent => prob.x.extend_from_slice(&r.td),
                    CovariateSelector::All => {
                        prob.x.extend_from_slice(&s.fixed);
                        prob.x.extend_from_slice(&r.td);
                    }
                }
            }
        }
        let mut times: Vec<f64> = prob.stop.iter().zip(&prob.event).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
        if times.is_empty() {
            return Err(CoxError::NoEvents);
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        prob.times = times;
        Ok(prob)
    }

    pub fn n_coef(&self) -> usize {
        self.p
    }

    fn at_risk(&self, i: usize, t: f64) -> bool {
        self.start[i] < t && (t < self.stop[i] || (t == self.stop[i] && !self.early_exit[i]))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn linear_predictors(&self, beta: &[f64]) -> (Vec<f64>, f64) {
        let eta: Vec<f64> =
            (0..self.start.len()).map(|i| self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
        let c = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (eta, if c.is_finite() { c } else { 0.0 })
    }

    /// Partial log-likelihood, score and observed information at `beta`.
    pub fn evaluate(&self, beta: &[f64], ties: Ties) -> Evaluation {
        let p = self.p;
        let (eta, c) = self.linear_predictors(beta);
        let r: Vec<f64> = eta.iter().map(|e| (e - c).exp()).collect();
        let mut ll = 0.0;
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        let (mut s1, mut e1) = (vec![0.0; p], vec![0.0; p]);
        let (mut s2, mut e2) = (vec![0.0; p * p], vec![0.0; p * p]);
        let mut m1 = vec![0.0; p];
        for &t in &self.times {
            let (mut s0, mut e0, mut d) = (0.0, 0.0, 0usize);
            for v in [&mut s1, &mut e1, &mut s2, &mut e2] {
                v.fill(0.0);
            }
            for i in 0..self.start.len() {
                if !self.at_risk(i, t) {
                    continue;
                }
                let xi = self.row(i);
                let ri = r[i];
                let dead = self.event[i] && self.stop[i] == t;
                s0 += ri;
                if dead {
                    d += 1;
                    ll += eta[i] - c;
                    e0 += ri;
                }
                for a in 0..p {
                    let w = ri * xi[a];
                    s1[a] += w;
                    if dead {
                        score[a] += xi[a];
                        e1[a] += w;
                    }
                    for b in 0..=a {
                        s2[a * p + b] += w * xi[b];
                        if dead {
                            e2[a * p + b] += w * xi[b];
                        }
                    }
                }
            }
            for k in 0..d {
                let f = match ties {
                    Ties::Breslow => 0.0,
                    Ties::Efron => k as f64 / d as f64,
                };
                let den = s0 - f * e0;
                ll -= den.ln();
                for a in 0..p {
                    m1[a] = (s1[a] - f * e1[a]) / den;
                    score[a] -= m1[a];
                }
                for a in 0..p {
                    for b in 0..=a {
                        info[a * p + b] += (s2[a * p + b] - f * e2[a * p + b]) / den - m1[a] * m1[b];
                    }
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[b * p + a] = info[a * p + b];
            }
        }
        Evaluation {
            log_likelihood: ll,
            score: DVector::from_vec(score),
            information: DMatrix::from_row_slice(p, p, &info),
        }
    }

    pub fn fit(&self, opts: CoxOptions) -> Result<CoxFit, CoxError> {
        let p = self.p;
        let zero = vec![0.0; p];
        let null = self.evaluate(&zero, opts.ties);
        if p > 0 && !linalg::is_positive_definite(&null.information, 1e-10) {
            return Err(CoxError::NonIdentifiable);
        }
        let mut beta = zero;
        let mut cur = null;
        let null_ll = cur.log_likelihood;
        let mut converged = p == 0;
        let mut iterations = 0;
        while !converged && iterations < opts.max_iter {
            if cur.score.amax() < opts.tol {
                converged = true;
                break;
            }
            iterations += 1;
            let step = linalg::solve_psd(&cur.information, &cur.score);
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..=opts.max_halvings {
                let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
                let ev = self.evaluate(&trial, opts.ties);
                let slack = 1e-12 * (1.0 + cur.log_likelihood.abs());
                if ev.log_likelihood.is_finite() && ev.log_likelihood >= cur.log_likelihood - slack {
                    accepted = Some((trial, ev));
                    break;
                }
                scale *= 0.5;
            }
            match accepted {
                Some((b, ev)) => {
                    beta = b;
                    cur = ev;
                }
                None => return Err(CoxError::Divergence),
            }
        }
        if !converged && cur.score.amax() < opts.tol {
            converged = true;
        }
        let covariance = linalg::psd_inverse(&cur.information);
        let (baseline_cumhaz, increments) = self.breslow(&beta);
        Ok(CoxFit {
            coefficients: beta,
            covariance,
            baseline_cumhaz,
            log_likelihood: cur.log_likelihood,
            null_log_likelihood: null_ll,
            n_subjects: self.n_subjects,
            n_rows: self.start.len(),
            converged,
            iterations,
            names: self.names.clone(),
            selector: self.selector,
            event: self.definition,
            ties: opts.ties,
            increments,
        })
    }

    /// Breslow increments dH₀(t) = d(t) / Σ_{risk} exp(βᵀx).
    fn breslow(&self, beta: &[f64]) -> (StepFunction, Vec<f64>) {
        let (eta, _) = self.linear_predictors(beta);
        let mut cum = 0.0;
        let mut values = Vec::with_capacity(self.times.len());
        let mut inc = Vec::with_capacity(self.times.len());
        for &t in &self.times {
            let (mut s0, mut d) = (0.0, 0.0);
            for i in 0..self.start.len() {
                if self.at_risk(i, t) {
                    s0 += eta[i].exp();
                    if self.event[i] && self.stop[i] == t {
                        d += 1.0;
                    }
                }
            }
            let h = d / s0;
            inc.push(h);
            cum += h;
            values.push(cum);
        }
        (StepFunction { knots: self.times.clone(), values, value_before_first_knot: 0.0 }, inc)
    }
}

pub fn fit_cox(
    data: &Dataset,
    selector: CovariateSelector,
    event: EventDefinition,
    opts: CoxOptions,
) -> Result<CoxFit, CoxError> {
    CoxProblem::new(data, selector, event)?.fit(opts)
}

impl CoxFit {
    fn accumulate(&self, subject: &Subject, t: f64, inclusive: bool) -> f64 {
        let knots = &self.baseline_cumhaz.knots;
        let mut h = 0.0;
        let mut cov = Vec::with_capacity(self.coefficients.len());
        for r in &subject.intervals {
            if r.start >= t {
                break;
            }
            let lo = knots.partition_point(|&k| k <= r.start);
            let hi = if r.stop < t || (inclusive && r.stop == t) {
                knots.partition_point(|&k| k <= r.stop)
            } else if inclusive {
                knots.partition_point(|&k| k <= t)
            } else {
                knots.partition_point(|&k| k < t)
            };
            if hi <= lo {
                continue;
            }
            let dh: f64 = self.increments[lo..hi].iter().sum();
            let mid = 0.5 * (r.start + r.stop);
            self.selector.covariates_at(subject, mid, &mut cov);
            let lp: f64 = cov.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum();
            h += lp.exp() * dh;
        }
        h
    }

    /// Ĥᵢ(t): baseline increments at u ≤ t within the subject's follow-up, each
    /// scaled by the subject's relative risk on the row covering u.
    pub fn subject_cumhaz(&self, subject: &Subject, t: f64) -> f64 {
        self.accumulate(subject, t, true)
    }

    /// Left limit Ĥᵢ(t−).
    pub fn subject_cumhaz_before(&self, subject: &Subject, t: f64) -> f64 {
        self.accumulate(subject, t, false)
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len()).map(|k| self.covariance[(k, k)].max(0.0).sqrt()).collect()
    }

    /// Linear predictor βᵀx for a covariate vector laid out like the fit.
    pub fn risk_score(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxSummaryRow {
    pub name: String,
    pub coef: f64,
    pub se: f64,
    pub hazard_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

pub fn cox_summary(fit: &CoxFit) -> Result<Vec<CoxSummaryRow>, CoxError> {
    if !fit.converged {
        return Err(CoxError::NotConverged);
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    Ok(fit
        .coefficients
        .iter()
        .zip(fit.standard_errors())
        .zip(&fit.names)
        .map(|((&b, se), name)| CoxSummaryRow {
            name: name.clone(),
            coef: b,
            se,
            hazard_ratio: b.exp(),
            ci_low: (b - 1.96 * se).exp(),
            ci_high: (b + 1.96 * se).exp(),
            p_value: if se > 0.0 { 2.0 * normal.cdf(-(b / se).abs()) } else { f64::NAN },
        })
        .collect())
}

/// Nagelkerke's R² with n = number of counting-process rows (the observation
/// count a counting-process Cox fit reports).
pub fn nagelkerke_r2(fit: &CoxFit) -> Result<f64, CoxError> {
    if !fit.converged {
        return Err(CoxError::NotConverged);
    }
    let n = fit.n_rows as f64;
    let num = 1.0 - (2.0 * (fit.null_log_likelihood - fit.log_likelihood) / n).exp();
    let den = 1.0 - (2.0 * fit.null_log_likelihood / n).exp();
    Ok((num / den).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::SurvivalRecord;

    fn data(rows: &[(f64, bool, f64)]) -> Dataset {
        let recs = rows
            .iter()
            .enumerate()
            .map(|(i, &(t, d, x))| SurvivalRecord {
                id: i.to_string(),
                start: 0.0,
                stop: t,
                status: d,
                fixed: vec![x],
                td: vec![],
            })
            .collect();
        Dataset::build(recs, vec!["x".into()], vec![]).unwrap()
    }

    #[test]
    fn constant_covariate_is_not_identifiable() {
        let d = data(&[(1.0, true, 1.0), (2.0, true, 1.0), (3.0, false, 1.0)]);
        let e = fit_cox(&d, CovariateSelector::Fixed, EventDefinition::Outcome, CoxOptions::default());
        assert_eq!(e.unwrap_err(), CoxError::NonIdentifiable);
    }

    #[test]
    fn null_loglik_is_log_risk_set_sizes() {
        let d = data(&[(1.0, true, 0.3), (2.0, true, -1.0), (3.0, false, 2.0), (4.0, true, 0.0)]);
        let prob = CoxProblem::new(&d, CovariateSelector::Fixed, EventDefinition::Outcome).unwrap();
        let ev = prob.evaluate(&[0.0], Ties::Breslow);
        let want = -(4f64.ln() + 3f64.ln() + 1f64.ln());
        assert!((ev.log_likelihood - want).abs() < 1e-14);
    }

    #[test]
    fn censoring_without_censored_subjects() {
        let d = data(&[(1.0, true, 0.0), (2.0, true, 1.0)]);
        let e = fit_cox(&d, CovariateSelector::Fixed, EventDefinition::Censoring, CoxOptions::default());
        assert_eq!(e.unwrap_err(), CoxError::NoEvents);
    }

    #[test]
    fn summary_of_zero_coefficient() {
        let d = data(&[(1.0, true, 0.0), (2.0, true, 1.0), (3.0, true, 0.0), (4.0, true, 1.0)]);
        let mut fit = fit_cox(&d, CovariateSelector::Fixed, EventDefinition::Outcome, CoxOptions::default()).unwrap();
        fit.coefficients[0] = 0.0;
        let row = &cox_summary(&fit).unwrap()[0];
        assert_eq!(row.hazard_ratio, 1.0);
        assert!((row.ci_low.ln() + row.ci_high.ln()).abs() < 1e-12);
    }

    #[test]
    fn r2_zero_when_no_improvement() {
        let d = data(&[(1.0, true, 0.0), (2.0, true, 1.0), (3.0, true, 0.0), (4.0, true, 1.0)]);
        let mut fit = fit_cox(&d, CovariateSelector::Fixed, EventDefinition::Outcome, CoxOptions::default()).unwrap();
        fit.log_likelihood = fit.null_log_likelihood;
        assert_eq!(nagelkerke_r2(&fit).unwrap(), 0.0);
        fit.converged = false;
        assert_eq!(nagelkerke_r2(&fit), Err(CoxError::NotConverged));
    }
}
