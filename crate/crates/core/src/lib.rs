//! Restricted mean survival time (RMST) regression with time-dependent
//! covariates.
//!
//! The pieces, bottom up:
//!
//! - [`survival`]: counting-process datasets, Kaplan–Meier, restriction at τ.
//! - [`cox`]: Cox models for the outcome and for the censoring distribution.
//! - [`rmst`]: IPCW weights, the contribution grid, the estimating-equation
//!   fit with sandwich variance, and individual prediction.
//! - [`sim`]: the Weibull generator with a covariate jump and the Monte Carlo
//!   studies.
//! - [`eval`]: C-index, IPCW prediction error, and repeated train/test splits.
//! - [`heart`]: the Stanford heart-transplant data, prepared for analysis.
//! - [`cli`], [`model_file`], [`report`]: the batch command surface.
//!
//! ```
//! use rmst_td::heart::stanford_heart;
//! use rmst_td::rmst::{fit_model, predict_rmst, RmstOptions};
//!
//! let data = stanford_heart();
//! let model = fit_model(&data, &RmstOptions::new(4.93)).unwrap();
//! // age < 45, enrolled one year in, prior bypass, transplanted
//! let p = predict_rmst(&model.fit, &[0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
//! assert!(p.ci_low < p.mu && p.mu < p.ci_high);
//! ```

pub mod cli;
pub mod cox;
pub mod eval;
pub mod heart;
mod linalg;
pub mod model_file;
pub mod report;
pub mod rmst;
pub mod sim;
pub mod survival;
