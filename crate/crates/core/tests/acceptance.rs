//! End-to-end acceptance checks. Every check prints one PASS/FAIL line to the
//! real stderr (bypassing libtest capture) and the test fails if any check
//! fails.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rmst_td::cox::*;
use rmst_td::eval::{repeated_evaluation, EvalOptions, ModelKind};
use rmst_td::heart::stanford_heart;
use rmst_td::rmst::{fit_model, predict_rmst, RmstFit, RmstOptions};
use rmst_td::sim::*;
use rmst_td::survival::{kaplan_meier, restrict, Dataset, SurvivalRecord};

struct Outcome {
    pass: bool,
    notes: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { pass: true, notes: Vec::new() }
    }

    fn check(&mut self, ok: bool, note: String) {
        if !ok {
            self.pass = false;
            self.notes.push(format!("FAILED {note}"));
        } else {
            self.notes.push(note);
        }
    }
}

fn report(name: &str, o: &Outcome, elapsed: Duration) {
    let mut err = std::io::stderr().lock();
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(err, "[{verdict}] {name} ({:.1}s)", elapsed.as_secs_f64());
    for n in &o.notes {
        let _ = writeln!(err, "       {n}");
    }
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

// criterion 1 --------------------------------------------------------------

fn single_rows(rows: &[(f64, bool, f64)]) -> Dataset {
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

fn oracles() -> Outcome {
    let mut o = Outcome::new();

    // Cox coefficient against a zooming grid search of the partial likelihood
    let rows = [(1.0, true, 0.5), (2.0, true, 1.5), (3.0, false, 0.2), (4.0, true, -0.3), (5.0, true, 0.9), (6.0, false, -1.0)];
    let ll = |b: f64| -> f64 {
        rows.iter()
            .filter(|r| r.1)
            .map(|&(t, _, x)| b * x - rows.iter().filter(|r| r.0 >= t).map(|r| (b * r.2).exp()).sum::<f64>().ln())
            .sum()
    };
    let (mut lo, mut hi, mut best) = (-5.0, 5.0, 0.0);
    for _ in 0..8 {
        let step = (hi - lo) / 200.0;
        best = (0..=200).map(|k| lo + k as f64 * step).max_by(|a, b| ll(*a).total_cmp(&ll(*b))).unwrap();
        lo = best - 2.0 * step;
        hi = best + 2.0 * step;
    }
    let fit = fit_cox(&single_rows(&rows), CovariateSelector::Fixed, EventDefinition::Outcome, CoxOptions::default())
        .unwrap();
    let err = (fit.coefficients[0] - best).abs();
    o.check(err <= 1e-4, format!("cox vs grid search: |diff| = {err:.2e} (<= 1e-4)"));

    // score against central differences on Stanford
    let d = stanford_heart();
    let prob = CoxProblem::new(&d, CovariateSelector::All, EventDefinition::Outcome).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let beta: Vec<f64> = (0..prob.n_coef()).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let ev = prob.evaluate(&beta, Ties::Breslow);
        let h = 1e-5;
        let fd: Vec<f64> = (0..beta.len())
            .map(|k| {
                let (mut up, mut dn) = (beta.clone(), beta.clone());
                up[k] += h;
                dn[k] -= h;
                (prob.evaluate(&up, Ties::Breslow).log_likelihood - prob.evaluate(&dn, Ties::Breslow).log_likelihood)
                    / (2.0 * h)
            })
            .collect();
        let diff: f64 = fd.iter().zip(ev.score.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(diff / ev.score.norm());
    }
    o.check(worst < 1e-6, format!("score vs finite differences: rel err = {worst:.2e} (< 1e-6)"));

    // fixed-covariate RMST with no censoring is OLS on min(T, tau)
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let obs: Vec<(f64, bool, f64)> = (0..80)
        .map(|_| {
            let x: f64 = rng.gen_range(-1.0..1.0);
            (rng.gen_range(0.1..3.0) * (1.0 + 0.4 * x), true, x)
        })
        .collect();
    let data = single_rows(&obs);
    let tau = 2.0;
    let m = fit_model(&data, &RmstOptions::new(tau)).unwrap();
    let n = obs.len() as f64;
    let xbar = obs.iter().map(|r| r.2).sum::<f64>() / n;
    let ybar = obs.iter().map(|r| r.0.min(tau)).sum::<f64>() / n;
    let sxy: f64 = obs.iter().map(|r| (r.2 - xbar) * (r.0.min(tau) - ybar)).sum();
    let sxx: f64 = obs.iter().map(|r| (r.2 - xbar).powi(2)).sum();
    let slope = sxy / sxx;
    let err = (m.fit.eta[1] - slope).abs().max((m.fit.eta[0] - (ybar - slope * xbar)).abs());
    o.check(err <= 1e-10, format!("zero-censoring RMST vs OLS: |diff| = {err:.2e} (<= 1e-10)"));

    // inversion identity
    let cfg = SimConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let u: f64 = rng.gen_range(1e-12..1.0);
        let t0 = rng.gen_range(0.0..4.0);
        let x = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        let t = gen_survival_time(u, t0, x, &cfg);
        let s = 0.1 * (0.1 * x).exp();
        let h = if t < t0 { s * t.powf(1.5) } else { s * t0.powf(1.5) + s * 0.1f64.exp() * (t.powf(1.5) - t0.powf(1.5)) };
        worst = worst.max((h + u.ln()).abs());
    }
    o.check(worst <= 1e-10, format!("weibull inversion: max |H(T) + log u| = {worst:.2e} (<= 1e-10)"));

    // KM area equals mean restricted time without censoring (dyadic times)
    let times: Vec<(f64, bool, f64)> = (0..64).map(|i| (((i * 37) % 101 + 1) as f64 / 16.0, true, 0.0)).collect();
    let d = single_rows(&times);
    let area = kaplan_meier(&d, false).unwrap().integrate(4.0);
    let view = restrict(&d, 4.0).unwrap();
    let mean = view.y.iter().sum::<f64>() / view.y.len() as f64;
    o.check(area == mean, format!("KM area {area} vs mean(Y) {mean} (exact)"));
    o
}

// criteria 2 and 3 ---------------------------------------------------------

const TABLE1_TRUE: [f64; 3] = [1.6439, -0.1885, 3.1630];
const TABLE1_MSE: [f64; 3] = [0.1441, 0.2264, 0.1684];

fn truth_recovery(truth: &[f64]) -> Outcome {
    let mut o = Outcome::new();
    for (k, (got, want)) in truth.iter().zip(TABLE1_TRUE).enumerate() {
        o.check(within(*got, want, 0.02), format!("beta{k}: {got:.4} vs {want} (±0.02)"));
    }
    o
}

fn table1_desk_scale(truth: &[f64]) -> Outcome {
    let mut o = Outcome::new();
    let cfg = SimConfig { n: 500, target_censoring: 0.15, replicates: 1000, ..SimConfig::default() };
    let (report, _) = run_coefficient_study(&cfg, truth).unwrap();
    o.check(report.failures == 0, format!("failed replicates: {}", report.failures));
    for (c, mse) in report.coefficients.iter().zip(TABLE1_MSE) {
        o.check(c.bias.abs() < 0.03, format!("{}: bias {:.4} (|.| < 0.03)", c.name, c.bias));
        o.check((0.90..=1.12).contains(&c.rel_se), format!("{}: rel SE {:.3} in [0.90, 1.12]", c.name, c.rel_se));
        o.check((0.93..=0.97).contains(&c.cp), format!("{}: CP {:.3} in [0.93, 0.97]", c.name, c.cp));
        // the table's MSE column is on the root scale
        let rel = (c.rmse - mse).abs() / mse;
        o.check(rel <= 0.30, format!("{}: RMSE {:.4} vs {mse} ({:.0}% off, <= 30%)", c.name, c.rmse, rel * 100.0));
    }
    o
}

// criterion 4 --------------------------------------------------------------

fn table2_orderings() -> Outcome {
    let mut o = Outcome::new();
    for cen in [0.15, 0.30, 0.45] {
        let cfg = SimConfig { n: 500, target_censoring: cen, replicates: 200, ..SimConfig::default() };
        let r = run_prediction_study(&cfg).unwrap();
        let get = |m: ModelKind| r.rows.iter().find(|row| row.model == m).unwrap();
        let (cox, t, f) = (get(ModelKind::TCox), get(ModelKind::TRmst), get(ModelKind::FRmst));
        let (pt, pf) = (t.prediction_error.unwrap(), f.prediction_error.unwrap());
        o.check(
            t.c_index > cox.c_index && t.c_index > f.c_index,
            format!("{cen}: C T-RMST {:.3} > T-Cox {:.3}, > F-RMST {:.3}", t.c_index, cox.c_index, f.c_index),
        );
        o.check(pt < pf, format!("{cen}: PE T-RMST {pt:.3} < F-RMST {pf:.3}"));
        if cen == 0.15 {
            o.check(within(t.c_index, 0.669, 0.03), format!("C(T-RMST) at 15%: {:.3} vs 0.669 (±0.03)", t.c_index));
        }
    }
    o
}

// criterion 5 --------------------------------------------------------------

fn stanford_cox() -> Outcome {
    let mut o = Outcome::new();
    let fit = fit_cox(
        &stanford_heart(),
        CovariateSelector::All,
        EventDefinition::Outcome,
        CoxOptions { ties: Ties::Efron, ..CoxOptions::default() },
    )
    .unwrap();
    let targets = [
        ("age 45-60", 1.397, 0.851, 2.290),
        ("age >=60", 1.881, 0.432, 8.200),
        ("enrollment", 0.855, 0.745, 0.980),
        ("bypass", 0.515, 0.249, 1.060),
        ("transplant", 1.077, 0.590, 1.960),
    ];
    for (row, (name, hr, lo, hi)) in cox_summary(&fit).unwrap().iter().zip(targets) {
        o.check(
            within(row.hazard_ratio, hr, 0.01) && within(row.ci_low, lo, 0.02) && within(row.ci_high, hi, 0.02),
            format!(
                "{name}: HR {:.3} ({:.3}, {:.3}) vs {hr} ({lo}, {hi})",
                row.hazard_ratio, row.ci_low, row.ci_high
            ),
        );
    }
    o
}

// criterion 6 --------------------------------------------------------------

/// (label, estimate, significant at 5%)
type RmstTargets = [(&'static str, f64, bool)];

const T_RMST: [(&str, f64, bool); 6] = [
    ("intercept", 0.426, false),
    ("age 45-60", 0.042, false),
    ("age >=60", -0.766, true),
    ("enrollment", -0.149, true),
    ("bypass", 0.778, true),
    ("transplant", 0.868, true),
];

const F_RMST: [(&str, f64, bool); 5] = [
    ("intercept", 1.770, true),
    ("age 45-60", -0.277, false),
    ("age >=60", -1.047, true),
    ("enrollment", -0.237, true),
    ("bypass", 1.189, true),
];

fn compare_rmst(o: &mut Outcome, model: &str, fit: &RmstFit, targets: &RmstTargets) {
    for ((est, p), (name, want, sig)) in fit.eta.iter().zip(fit.p_values()).zip(targets) {
        let ok = within(*est, *want, 0.10) && est.signum() == want.signum() && (p < 0.05) == *sig;
        o.check(ok, format!("{model} {name}: {est:.3} (p = {p:.3}) vs {want} ({})", if *sig { "sig" } else { "ns" }));
    }
}

fn stanford_rmst() -> Outcome {
    let mut o = Outcome::new();
    let d = stanford_heart();
    let t = fit_model(&d, &RmstOptions::new(4.93)).unwrap();
    compare_rmst(&mut o, "T-RMST", &t.fit, &T_RMST);
    let f = fit_model(&d.without_td(), &RmstOptions::new(4.93)).unwrap();
    compare_rmst(&mut o, "F-RMST", &f.fit, &F_RMST);
    o
}

// criterion 7 --------------------------------------------------------------

fn stanford_evaluation() -> Outcome {
    let mut o = Outcome::new();
    let d = stanford_heart();
    let opts = EvalOptions { rmst: RmstOptions::new(4.93), ..EvalOptions::default() };
    let models = [ModelKind::TCox, ModelKind::TRmst, ModelKind::FRmst];
    let s = repeated_evaluation(&d, &models, 2.0 / 3.0, 500, 1, &opts);
    o.notes.push(format!("repeats used {} of 500, reseeds {}", s.repeats_used, s.reseeds));
    let c: Vec<f64> = s.rows.iter().map(|r| r.c_index).collect();
    for (k, want) in [0.541, 0.652, 0.531].into_iter().enumerate() {
        o.check(within(c[k], want, 0.04), format!("C {}: {:.3} vs {want} (±0.04)", models[k], c[k]));
    }
    o.check(c[1] > c[0] && c[0] > c[2], format!("C ordering T-RMST > T-Cox > F-RMST: {c:.3?}"));
    let (pt, pf) = (s.rows[1].prediction_error.unwrap(), s.rows[2].prediction_error.unwrap());
    o.check(pt < pf, format!("PE T-RMST {pt:.3} < F-RMST {pf:.3}"));

    let fit = fit_model(&d, &RmstOptions::new(4.93)).unwrap().fit;
    for (tx, mu, lo, hi) in [(0.0, 1.055, 0.238f64, 1.872f64), (1.0, 1.923, 0.985, 2.861)] {
        let p = predict_rmst(&fit, &[0.0, 0.0, 1.0, 1.0, tx]).unwrap();
        let signs = p.ci_low.signum() == lo.signum() && p.ci_high.signum() == hi.signum();
        o.check(
            within(p.mu, mu, 0.10) && signs,
            format!("prediction transplant={tx}: {:.3} ({:.3}, {:.3}) vs {mu} ({lo}, {hi})", p.mu, p.ci_low, p.ci_high),
        );
    }
    o
}

// criterion 8 --------------------------------------------------------------

const PROPERTY_TARGETS: [&str; 6] = ["survival", "cox", "rmst", "sim", "eval", "cli"];

/// Newest compiled test binary for `target` next to this one.
fn sibling_test_binary(target: &str) -> Option<PathBuf> {
    let me = std::env::current_exe().ok()?;
    let dir = me.parent()?;
    let prefix = format!("{target}-");
    std::fs::read_dir(dir)
        .ok()?
        .filter_map(Result::ok)
        .filter(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            name.starts_with(&prefix)
                && name[prefix.len()..].chars().all(|c| c.is_ascii_hexdigit())
                && e.metadata().is_ok_and(|m| m.is_file())
        })
        .max_by_key(|e| e.metadata().and_then(|m| m.modified()).ok())
        .map(|e| e.path())
}

fn property_suite(elapsed_so_far: Duration) -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    for target in PROPERTY_TARGETS {
        match sibling_test_binary(target) {
            Some(bin) => {
                let out = Command::new(&bin).arg("--quiet").output();
                let ok = out.as_ref().is_ok_and(|o| o.status.success());
                let summary = out
                    .as_ref()
                    .ok()
                    .and_then(|o| {
                        String::from_utf8_lossy(&o.stdout).lines().find(|l| l.starts_with("test result")).map(String::from)
                    })
                    .unwrap_or_else(|| "no result line".into());
                o.check(ok, format!("{target}: {summary}"));
            }
            None => o.check(false, format!("{target}: test binary not found; build with cargo test --workspace")),
        }
    }
    let total = elapsed_so_far + start.elapsed();
    o.check(total < Duration::from_secs(600), format!("acceptance + property suites: {:.0}s (< 600s)", total.as_secs_f64()));
    o
}

#[test]
fn acceptance() {
    let t0 = Instant::now();
    let mut failed = Vec::new();
    let mut run = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        report(name, &o, start.elapsed());
        if !o.pass {
            failed.push(name.to_string());
        }
    };
    run("1 oracle equivalences", &mut oracles);
    let truth = true_coefficients(&SimConfig::default(), 200_000).unwrap();
    run("2 true-coefficient recovery", &mut || truth_recovery(&truth));
    run("3 coefficient study at desk scale", &mut || table1_desk_scale(&truth));
    run("4 prediction study orderings", &mut table2_orderings);
    run("5 Stanford Cox reproduction", &mut stanford_cox);
    run("6 Stanford RMST reproduction", &mut stanford_rmst);
    run("7 Stanford evaluation and predictions", &mut stanford_evaluation);
    let so_far = t0.elapsed();
    run("8 property suite", &mut || property_suite(so_far));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
