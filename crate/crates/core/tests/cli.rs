use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rmst_td::cli::*;
use rmst_td::cox::Ties;
use rmst_td::eval::ModelKind;
use rmst_td::heart::stanford_heart;
use rmst_td::model_file::{ModelFile, ModelFileError};
use rmst_td::rmst::{GridPolicy, Link, WeightScheme};
use rmst_td::survival::write_csv;
use tempfile::TempDir;

fn stanford_csv(dir: &Path) -> PathBuf {
    let path = dir.join("heart.csv");
    let mut buf = Vec::new();
    write_csv(&stanford_heart(), &mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

fn fit_request(data: &Path, model: ModelKind, out: &Path) -> FitRequest {
    FitRequest {
        data: DataSpec { path: data.into(), schema_td: vec!["transplant".into()], covariates: None },
        model,
        tau: Some(4.93),
        link: Link::Identity,
        grid_policy: GridPolicy::ObservedTime,
        weight_scheme: WeightScheme::TimeDependent,
        max_weight: None,
        ties: Ties::Efron,
        out: out.into(),
    }
}

fn profile(transplant: f64) -> Vec<(String, f64)> {
    [("age_45_60", 0.0), ("age_60", 0.0), ("enrollment", 1.0), ("surgery", 1.0), ("transplant", transplant)]
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect()
}

#[test]
fn fit_then_predict() {
    let tmp = TempDir::new().unwrap();
    let data = stanford_csv(tmp.path());
    let out = tmp.path().join("trmst");
    let r = cmd_fit(&fit_request(&data, ModelKind::TRmst, &out)).unwrap();
    for f in ["coefficients.csv", "diagnostics.txt", "model.txt", "manifest.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let header = r.table.lines().next().unwrap();
    assert_eq!(header, "variable,coef,se,rmstd,ci_low,ci_high,p_value");
    assert!(r.table.contains("transplant"));

    let model = out.join("model.txt");
    let without = cmd_predict(&model, &profile(0.0)).unwrap();
    let with = cmd_predict(&model, &profile(1.0)).unwrap();
    assert!((without.mu - 1.055).abs() < 0.10, "{without:?}");
    assert!((with.mu - 1.923).abs() < 0.10, "{with:?}");
    assert!(without.ci_low > 0.0 && with.ci_low > 0.0);

    let mut partial = profile(1.0);
    partial.retain(|(k, _)| k != "surgery");
    let err = cmd_predict(&model, &partial).unwrap_err().to_string();
    assert!(err.contains("surgery") && err.contains("required"), "{err}");
}

#[test]
fn model_file_round_trips() {
    let tmp = TempDir::new().unwrap();
    let data = stanford_csv(tmp.path());
    let out = tmp.path().join("m");
    let r = cmd_fit(&fit_request(&data, ModelKind::TRmst, &out)).unwrap();
    let text = fs::read_to_string(out.join("model.txt")).unwrap();
    let parsed = ModelFile::parse(&text).unwrap();
    assert_eq!(parsed, r.model);
    assert_eq!(parsed.render(), text);
    let fit = parsed.rmst_fit().unwrap();
    assert_eq!(fit.tau, 4.93);
    assert_eq!(fit.eta.len(), 6);
}

#[test]
fn cox_model_cannot_predict_rmst() {
    let tmp = TempDir::new().unwrap();
    let data = stanford_csv(tmp.path());
    let out = tmp.path().join("cox");
    let r = cmd_fit(&fit_request(&data, ModelKind::TCox, &out)).unwrap();
    assert!(r.table.starts_with("variable,coef,se,hr,ci_low,ci_high,p_value"));
    assert!((r.r2 - 0.075).abs() < 0.001);
    let err = cmd_predict(&out.join("model.txt"), &profile(1.0)).unwrap_err();
    assert!(matches!(err, CliError::ModelFile(ModelFileError::ModelKindMismatch { .. })), "{err:?}");
}

#[test]
fn rmst_fit_requires_tau() {
    let tmp = TempDir::new().unwrap();
    let data = stanford_csv(tmp.path());
    let mut req = fit_request(&data, ModelKind::FRmst, &tmp.path().join("x"));
    req.tau = None;
    assert!(matches!(cmd_fit(&req), Err(CliError::Usage(_))));
}

#[test]
fn malformed_row_is_named() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.csv");
    fs::write(&path, "id,start,stop,status,x\n1,0,1,1,0.5\n2,0,abc,0,1\n").unwrap();
    let mut req = fit_request(&path, ModelKind::FRmst, &tmp.path().join("out"));
    req.data.schema_td.clear();
    let err = cmd_fit(&req).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn time_dependent_model_without_td_columns_is_fixed_model() {
    let tmp = TempDir::new().unwrap();
    let data = stanford_csv(tmp.path());
    let (a, b) = (tmp.path().join("t"), tmp.path().join("f"));
    let fixed_only = tmp.path().join("fixed.csv");
    let mut buf = Vec::new();
    write_csv(&stanford_heart().without_td(), &mut buf).unwrap();
    fs::write(&fixed_only, buf).unwrap();
    let mut t = fit_request(&fixed_only, ModelKind::TRmst, &a);
    t.data.schema_td.clear();
    cmd_fit(&t).unwrap();
    cmd_fit(&fit_request(&data, ModelKind::FRmst, &b)).unwrap();
    assert_eq!(fs::read(a.join("coefficients.csv")).unwrap(), fs::read(b.join("coefficients.csv")).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let data = stanford_csv(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for model in [ModelKind::TRmst, ModelKind::TCox] {
        cmd_fit(&fit_request(&data, model, &a)).unwrap();
        cmd_fit(&fit_request(&data, model, &b)).unwrap();
        for f in ["coefficients.csv", "diagnostics.txt", "model.txt"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
    }
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("input.sha256"));
    assert_eq!(manifest.matches("output.sha256").count(), 3);
}

#[test]
fn simulate_writes_tables() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("study.txt");
    fs::write(&cfg, "n = 200\nreplicates = 8\nbig_n = 20000\ntarget_censoring = 0.15, 0.30\n").unwrap();
    let out = tmp.path().join("coef");
    cmd_simulate(&cfg, Study::Coefficients, Some(3), &out).unwrap();
    let t1 = fs::read_to_string(out.join("table1.csv")).unwrap();
    assert_eq!(t1.lines().count(), 1 + 2 * 3);
    assert_eq!(fs::read_to_string(out.join("replicates.csv")).unwrap().lines().count(), 1 + 2 * 8 * 3);

    let again = tmp.path().join("coef2");
    cmd_simulate(&cfg, Study::Coefficients, Some(3), &again).unwrap();
    assert_eq!(t1, fs::read_to_string(again.join("table1.csv")).unwrap());

    let out = tmp.path().join("pred");
    cmd_simulate(&cfg, Study::Prediction, Some(3), &out).unwrap();
    let t2 = fs::read_to_string(out.join("table2.csv")).unwrap();
    let cox: Vec<&str> = t2.lines().filter(|l| l.contains(",t-cox,")).collect();
    assert_eq!(cox.len(), 2);
    assert!(cox.iter().all(|l| l.ends_with(',')), "{t2}");

    fs::write(&cfg, "replicates = 0\n").unwrap();
    assert!(matches!(cmd_simulate(&cfg, Study::Coefficients, None, &out), Err(CliError::Sim(_))));
}

fn evaluate_request(data: &Path, models: Vec<ModelKind>, repeats: usize, out: &Path) -> EvaluateRequest {
    EvaluateRequest {
        data: DataSpec { path: data.into(), schema_td: vec!["transplant".into()], covariates: None },
        models,
        fraction: 2.0 / 3.0,
        repeats,
        seed: 5,
        tau: 4.93,
        link: Link::Identity,
        grid_policy: GridPolicy::ObservedTime,
        weight_scheme: WeightScheme::TimeDependent,
        max_weight: None,
        ties: Ties::Efron,
        out: out.into(),
    }
}

#[test]
fn evaluate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let data = stanford_csv(tmp.path());
    let all = vec![ModelKind::TCox, ModelKind::TRmst, ModelKind::FRmst];
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cmd_evaluate(&evaluate_request(&data, all.clone(), 1, &a)).unwrap();
    cmd_evaluate(&evaluate_request(&data, all.clone(), 1, &b)).unwrap();
    let t4 = fs::read_to_string(a.join("table4.csv")).unwrap();
    assert_eq!(t4, fs::read_to_string(b.join("table4.csv")).unwrap());
    assert_eq!(t4.lines().count(), 4);

    let (s, _) = cmd_evaluate(&evaluate_request(&data, vec![ModelKind::TRmst], 2, &a)).unwrap();
    assert_eq!(s.rows.len(), 1);
    assert!(matches!(cmd_evaluate(&evaluate_request(&data, all, 0, &a)), Err(CliError::Usage(_))));
    assert!(matches!(cmd_evaluate(&evaluate_request(&data, vec![], 1, &a)), Err(CliError::Usage(_))));
}

#[test]
fn study_cells_expand_lists() {
    let cells = study_cells("n = 500, 1000\ntarget_censoring = 0.15,0.3,0.45\nseed = 9").unwrap();
    assert_eq!(cells.len(), 6);
    assert!(cells.iter().all(|c| c.seed == 9));
    assert_eq!((cells[5].n, cells[5].target_censoring), (1000, 0.45));
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rmst-td"))
}

#[test]
fn binary_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let data = stanford_csv(tmp.path());
    let out = tmp.path().join("run");
    let ok = bin()
        .args(["fit", "--model", "t-rmst", "--tau", "4.93", "--schema-td", "transplant"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("transplant"));

    let pred = bin()
        .args(["predict", "--set", "age_45_60=0", "--set", "age_60=0", "--set", "enrollment=1"])
        .args(["--set", "surgery=1", "--set", "transplant=1", "--model"])
        .arg(out.join("model.txt"))
        .output()
        .unwrap();
    assert!(pred.status.success());
    let line = String::from_utf8_lossy(&pred.stdout);
    let mu: f64 = line.split_whitespace().next().unwrap().parse().unwrap();
    assert!((mu - 1.923).abs() < 0.10, "{line}");

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "id,start,stop,status\n1,0,1,1\n1,0.5,2,0\n").unwrap();
    let fail = bin().args(["fit", "--model", "t-cox", "--data"]).arg(&bad).arg("--out").arg(tmp.path().join("x")).output().unwrap();
    assert!(!fail.status.success());
    assert!(String::from_utf8_lossy(&fail.stderr).starts_with("error:"));
    assert!(!tmp.path().join("x").exists());

    let usage = bin().args(["predict", "--model"]).arg(out.join("model.txt")).output().unwrap();
    assert!(!usage.status.success());
}
