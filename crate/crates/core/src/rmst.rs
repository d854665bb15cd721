//! IPCW estimating equations for restricted mean survival time with
//! time-dependent covariates, sandwich variance, and individual prediction.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::cox::{CoxError, CoxFit, CoxOptions, CoxProblem, CovariateSelector, EventDefinition};
use crate::linalg;
use crate::survival::{restrict, DataError, Dataset, RestrictedView, Subject};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RmstError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("censoring model: {0}")]
    Cox(#[from] CoxError),
    #[error("contribution grid is empty (no complete subjects)")]
    EmptyGrid,
    #[error("design is not identifiable")]
    NonIdentifiable,
    #[error("estimating equation did not converge")]
    Divergence,
    #[error("A matrix is singular")]
    SingularA,
    #[error("fit did not converge")]
    NotConverged,
    #[error("profile has {got} values, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite censoring weight for subject {0}")]
    NonFiniteWeight(String),
    #[error("residual degrees of freedom < 1")]
    NoDegreesOfFreedom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Link {
    #[default]
    Identity,
    Log,
}

impl Link {
    pub fn forward(self, mu: f64) -> f64 {
        match self {
            Link::Identity => mu,
            Link::Log => mu.ln(),
        }
    }
    pub fn inverse(self, x: f64) -> f64 {
        match self {
            Link::Identity => x,
            Link::Log => x.exp(),
        }
    }
    pub fn inverse_deriv(self, x: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Log => x.exp(),
        }
    }
}

/// Where each subject contributes to the inner time sum of the estimating
/// equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridPolicy {
    /// One row at t = Yᵢ with the covariates in force at Yᵢ.
    #[default]
    ObservedTime,
    /// One row per counting-process interval starting before Yᵢ, at its start.
    IntervalStarts,
    /// Rows at t = 0 and every distinct event time t ≤ Yᵢ.
    EventTimes,
}

/// Which censoring models make up the weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    /// exp(Ĥ^Z) from the censoring model on the time-dependent covariates;
    /// exp(Ĥ^X) on the fixed covariates when there are none.
    #[default]
    TimeDependent,
    /// exp(Ĥ^X)·exp(Ĥ^Z): separate fixed and time-dependent censoring models,
    /// each carrying its own baseline.
    Product,
}

macro_rules! named_enum {
    ($t:ty { $($v:path => $s:literal),+ $(,)? }) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(format!("unknown value `{s}` (expected one of: {})", [$($s),+].join(", "))),
                }
            }
        }
    };
}

named_enum!(Link { Link::Identity => "identity", Link::Log => "log" });
named_enum!(GridPolicy {
    GridPolicy::ObservedTime => "observed-time",
    GridPolicy::IntervalStarts => "interval-starts",
    GridPolicy::EventTimes => "event-times",
});
named_enum!(WeightScheme { WeightScheme::TimeDependent => "time-dependent", WeightScheme::Product => "product" });

/// Inverse-probability-of-censoring weights t ↦ exp(Ĥᵢ(t−)).
#[derive(Debug, Clone)]
pub struct CensoringWeights {
    pub fixed_model: Option<CoxFit>,
    pub td_model: Option<CoxFit>,
    pub scheme: WeightScheme,
    pub max_weight: Option<f64>,
}

impl CensoringWeights {
    pub fn unit() -> Self {
        CensoringWeights { fixed_model: None, td_model: None, scheme: WeightScheme::default(), max_weight: None }
    }

    pub fn fit(data: &Dataset, scheme: WeightScheme, max_weight: Option<f64>) -> Result<Self, RmstError> {
        if data.subjects().iter().all(Subject::died) {
            return Ok(CensoringWeights { scheme, max_weight, ..Self::unit() });
        }
        let model = |sel| -> Result<CoxFit, RmstError> {
            Ok(CoxProblem::new(data, sel, EventDefinition::Censoring)?.fit(CoxOptions::default())?)
        };
        let (p, q) = (data.p(), data.q());
        let (fixed_model, td_model) = match scheme {
            WeightScheme::TimeDependent if q > 0 => (None, Some(model(CovariateSelector::TimeDependent)?)),
            WeightScheme::TimeDependent => (Some(model(CovariateSelector::Fixed)?), None),
            WeightScheme::Product => {
                let x = if p > 0 || q == 0 { Some(model(CovariateSelector::Fixed)?) } else { None };
                let z = if q > 0 { Some(model(CovariateSelector::TimeDependent)?) } else { None };
                (x, z)
            }
        };
        Ok(CensoringWeights { fixed_model, td_model, scheme, max_weight })
    }

    pub fn cumhaz_before(&self, subject: &Subject, t: f64) -> f64 {
        [&self.fixed_model, &self.td_model].iter().filter_map(|m| m.as_ref()).map(|m| m.subject_cumhaz_before(subject, t)).sum()
    }

    pub fn weight(&self, subject: &Subject, t: f64) -> f64 {
        let w = self.cumhaz_before(subject, t).exp();
        match self.max_weight {
            Some(cap) => w.min(cap),
            None => w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub subject: usize,
    pub t: f64,
    pub s: Vec<f64>,
    pub delta_tilde: bool,
    pub weight: f64,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct ContributionGrid {
    pub rows: Vec<GridRow>,
    pub n_subjects: usize,
    pub names: Vec<String>,
    pub p: usize,
    pub q: usize,
    pub tau: f64,
    pub policy: GridPolicy,
}

/// Design vector (1, Xᵀ, Z(t)ᵀ)ᵀ.
pub fn design_at(subject: &Subject, t: f64) -> Vec<f64> {
    let mut s = Vec::with_capacity(1 + subject.fixed.len() + subject.intervals[0].td.len());
    s.push(1.0);
    s.extend_from_slice(&subject.fixed);
    s.extend_from_slice(&subject.row_at(t).td);
    s
}

pub fn build_grid(
    data: &Dataset,
    view: &RestrictedView,
    weights: &CensoringWeights,
    policy: GridPolicy,
) -> Result<ContributionGrid, RmstError> {
    let event_times: Vec<f64> = if policy == GridPolicy::EventTimes {
        let mut t: Vec<f64> = data.subjects().iter().filter(|s| s.died()).map(Subject::exit).filter(|&u| u <= view.tau).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    } else {
        vec![]
    };
    let mut rows = Vec::new();
    for (i, s) in data.subjects().iter().enumerate() {
        let (y, dt) = (view.y[i], view.delta_tilde[i]);
        let mut push = |t: f64, covariates_at: f64| -> Result<(), RmstError> {
            let weight = weights.weight(s, t);
            if !weight.is_finite() {
                return Err(RmstError::NonFiniteWeight(s.id.clone()));
            }
            rows.push(GridRow { subject: i, t, s: design_at(s, covariates_at), delta_tilde: dt, weight, y });
            Ok(())
        };
        match policy {
            GridPolicy::ObservedTime => push(y, y)?,
            GridPolicy::IntervalStarts => {
                for r in s.intervals.iter().filter(|r| r.start < y) {
                    // covariates of this interval: evaluate just inside it
                    push(r.start, r.start + 0.5 * (r.stop.min(y) - r.start))?;
                }
            }
            GridPolicy::EventTimes => {
                push(0.0, 0.0)?;
                for &t in event_times.iter().filter(|&&t| t > 0.0 && t <= y) {
                    push(t, t)?;
                }
            }
        }
    }
    if !rows.iter().any(|r| r.delta_tilde) {
        return Err(RmstError::EmptyGrid);
    }
    let mut names = vec!["(Intercept)".to_string()];
    names.extend(data.fixed_names().iter().chain(data.td_names()).cloned());
    Ok(ContributionGrid { rows, n_subjects: data.n_subjects(), names, p: data.p(), q: data.q(), tau: view.tau, policy })
}

#[derive(Debug, Clone)]
pub struct RmstFit {
    pub eta: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub ase: Vec<f64>,
    pub tau: f64,
    pub link: Link,
    pub df: usize,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    pub grid_policy: GridPolicy,
    pub names: Vec<String>,
}

struct Sums {
    a: DMatrix<f64>,
    u: DVector<f64>,
}

fn weighted_sums(grid: &ContributionGrid, eta: &DVector<f64>, link: Link) -> Sums {
    let k = eta.len();
    let mut a = DMatrix::zeros(k, k);
    let mut u = DVector::zeros(k);
    for r in grid.rows.iter().filter(|r| r.delta_tilde) {
        let s = DVector::from_column_slice(&r.s);
        let lp = s.dot(eta);
        a.ger(r.weight * link.inverse_deriv(lp), &s, &s, 1.0);
        u.axpy(r.weight * (r.y - link.inverse(lp)), &s, 1.0);
    }
    let n = grid.n_subjects as f64;
    Sums { a: a / n, u: u / n }
}

pub fn fit_rmst(grid: &ContributionGrid, link: Link) -> Result<RmstFit, RmstError> {
    let k = 1 + grid.p + grid.q;
    let n = grid.n_subjects;
    if n < k + 1 {
        return Err(RmstError::NoDegreesOfFreedom);
    }
    let complete: Vec<&GridRow> = grid.rows.iter().filter(|r| r.delta_tilde).collect();
    let mut gram = DMatrix::zeros(k, k);
    for r in &complete {
        let s = DVector::from_column_slice(&r.s);
        gram.ger(r.weight, &s, &s, 1.0);
    }
    if !linalg::is_positive_definite(&gram, 1e-12) {
        return Err(RmstError::NonIdentifiable);
    }

    let tol = 1e-8;
    let mut eta = DVector::zeros(k);
    let mut iterations = 0;
    match link {
        Link::Identity => {
            let mut rhs = DVector::zeros(k);
            for r in &complete {
                rhs.axpy(r.weight * r.y, &DVector::from_column_slice(&r.s), 1.0);
            }
            eta = gram.clone().cholesky().ok_or(RmstError::NonIdentifiable)?.solve(&rhs);
            // one refinement step against rounding in the normal equations
            let res = weighted_sums(grid, &eta, link);
            if let Some(ch) = res.a.clone().cholesky() {
                eta += ch.solve(&res.u);
            }
        }
        Link::Log => {
            let (sw, swy) = complete.iter().fold((0.0, 0.0), |(a, b), r| (a + r.weight, b + r.weight * r.y));
            eta[0] = (swy / sw).ln();
            let mut cur = weighted_sums(grid, &eta, link);
            while cur.u.amax() >= tol {
                if iterations == 100 {
                    return Err(RmstError::Divergence);
                }
                iterations += 1;
                let step = cur.a.clone().lu().solve(&cur.u).ok_or(RmstError::SingularA)?;
                let mut scale = 1.0;
                let mut next = None;
                for _ in 0..=20 {
                    let trial = &eta + &step * scale;
                    let s = weighted_sums(grid, &trial, link);
                    if s.u.norm().is_finite() && s.u.norm() < cur.u.norm() {
                        next = Some((trial, s));
                        break;
                    }
                    scale *= 0.5;
                }
                let (e, s) = next.ok_or(RmstError::Divergence)?;
                eta = e;
                cur = s;
            }
        }
    }

    let Sums { a, u } = weighted_sums(grid, &eta, link);
    let converged = u.amax() < tol && eta.iter().all(|v| v.is_finite());
    let a_inv = a.clone().try_inverse().ok_or(RmstError::SingularA)?;

    let mut eps = vec![DVector::<f64>::zeros(k); n];
    for r in &complete {
        let s = DVector::from_column_slice(&r.s);
        let resid = r.y - link.inverse(s.dot(&eta));
        eps[r.subject].axpy(r.weight * resid, &s, 1.0);
    }
    let mut b = DMatrix::zeros(k, k);
    for e in &eps {
        b.ger(1.0, e, e, 1.0);
    }
    b /= n as f64;
    let v = &a_inv * b * a_inv.transpose();
    let covariance = (&v + v.transpose()) * 0.5;
    let ase = (0..k).map(|j| (covariance[(j, j)].max(0.0) / n as f64).sqrt()).collect();
    Ok(RmstFit {
        eta: eta.iter().copied().collect(),
        covariance,
        ase,
        tau: grid.tau,
        link,
        df: n - k,
        n,
        converged,
        iterations,
        grid_policy: grid.policy,
        names: grid.names.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mu: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn t_quantile(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1").inverse_cdf(0.975)
}

impl RmstFit {
    /// μ̂ for a full design vector (leading 1 included).
    pub fn mean_for(&self, s: &[f64]) -> f64 {
        self.link.inverse(s.iter().zip(&self.eta).map(|(a, b)| a * b).sum())
    }

    /// μ̂ for a subject, using the covariates in force at min(U, τ).
    pub fn predict_subject(&self, subject: &Subject) -> f64 {
        self.mean_for(&design_at(subject, subject.exit().min(self.tau)))
    }

    pub fn p_values(&self) -> Vec<f64> {
        let t = StudentsT::new(0.0, 1.0, self.df as f64).expect("df >= 1");
        self.eta.iter().zip(&self.ase).map(|(e, se)| 2.0 * t.cdf(-(e / se).abs())).collect()
    }

    pub fn confidence_intervals(&self) -> Vec<(f64, f64)> {
        let q = t_quantile(self.df);
        self.eta.iter().zip(&self.ase).map(|(e, se)| (e - q * se, e + q * se)).collect()
    }
}

/// `profile` holds the fixed covariates followed by the time-dependent values
/// (no intercept).
pub fn predict_rmst(fit: &RmstFit, profile: &[f64]) -> Result<Prediction, RmstError> {
    if !fit.converged {
        return Err(RmstError::NotConverged);
    }
    let k = fit.eta.len();
    if profile.len() + 1 != k {
        return Err(RmstError::DimensionMismatch { expected: k - 1, got: profile.len() });
    }
    let s = DVector::from_iterator(k, std::iter::once(1.0).chain(profile.iter().copied()));
    let lp = s.dot(&DVector::from_column_slice(&fit.eta));
    let mu = fit.link.inverse(lp);
    let quad = (s.transpose() * &fit.covariance * &s)[(0, 0)].max(0.0);
    let se = fit.link.inverse_deriv(lp).abs() * (quad / fit.n as f64).sqrt();
    let q = t_quantile(fit.df);
    Ok(Prediction {
        mu,
        se,
        ci_low: (mu - q * se).clamp(0.0, fit.tau),
        ci_high: (mu + q * se).clamp(0.0, fit.tau),
    })
}

/// Weighted pseudo-R² over complete rows.
pub fn rmst_r2(fit: &RmstFit, grid: &ContributionGrid) -> Result<f64, RmstError> {
    if !fit.converged {
        return Err(RmstError::NotConverged);
    }
    let rows: Vec<&GridRow> = grid.rows.iter().filter(|r| r.delta_tilde).collect();
    let sw: f64 = rows.iter().map(|r| r.weight).sum();
    let ybar = rows.iter().map(|r| r.weight * r.y).sum::<f64>() / sw;
    let sse: f64 = rows.iter().map(|r| r.weight * (r.y - fit.mean_for(&r.s)).powi(2)).sum();
    let sst: f64 = rows.iter().map(|r| r.weight * (r.y - ybar).powi(2)).sum();
    Ok(if sst > 0.0 { 1.0 - sse / sst } else { 0.0 })
}

#[derive(Debug, Clone, Copy)]
pub struct RmstOptions {
    pub tau: f64,
    pub link: Link,
    pub grid_policy: GridPolicy,
    pub weight_scheme: WeightScheme,
    pub max_weight: Option<f64>,
}

impl RmstOptions {
    pub fn new(tau: f64) -> Self {
        RmstOptions {
            tau,
            link: Link::default(),
            grid_policy: GridPolicy::default(),
            weight_scheme: WeightScheme::default(),
            max_weight: None,
        }
    }
}

/// A fitted model together with the censoring weights it was built from.
#[derive(Debug, Clone)]
pub struct RmstModel {
    pub fit: RmstFit,
    pub weights: CensoringWeights,
    pub r2: f64,
    pub weight_scheme: WeightScheme,
}

/// Weights → grid → estimating equation, end to end.
pub fn fit_model(data: &Dataset, opts: &RmstOptions) -> Result<RmstModel, RmstError> {
    let view = restrict(data, opts.tau)?;
    let weights = CensoringWeights::fit(data, opts.weight_scheme, opts.max_weight)?;
    let grid = build_grid(data, &view, &weights, opts.grid_policy)?;
    let fit = fit_rmst(&grid, opts.link)?;
    let r2 = rmst_r2(&fit, &grid).unwrap_or(f64::NAN);
    Ok(RmstModel { fit, weights, r2, weight_scheme: opts.weight_scheme })
}
