use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rmst_td::cli::{self, CliError, DataSpec, EvaluateRequest, FitRequest, Study};
use rmst_td::cox::Ties;
use rmst_td::eval::ModelKind;
use rmst_td::rmst::{GridPolicy, Link, WeightScheme};

#[derive(Parser)]
#[command(name = "rmst-td", version, about = "RMST regression with time-dependent covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// counting-process CSV: id,start,stop,status,<covariates…>
    #[arg(long)]
    data: PathBuf,
    /// comma-separated time-dependent columns
    #[arg(long = "schema-td", value_delimiter = ',')]
    schema_td: Vec<String>,
    /// keep only these covariate columns
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
}

impl From<DataArgs> for DataSpec {
    fn from(a: DataArgs) -> Self {
        DataSpec { path: a.data, schema_td: a.schema_td, covariates: a.covariates }
    }
}

#[derive(Args, Clone)]
struct RmstArgs {
    #[arg(long, default_value = "identity")]
    link: Link,
    #[arg(long = "grid-policy", default_value = "observed-time")]
    grid_policy: GridPolicy,
    #[arg(long, default_value = "time-dependent")]
    weights: WeightScheme,
    #[arg(long = "max-weight")]
    max_weight: Option<f64>,
    /// tie handling for the outcome Cox model
    #[arg(long, default_value = "efron", value_parser = cli::parse_ties)]
    ties: Ties,
}

#[derive(Subcommand)]
enum Command {
    /// Fit t-rmst, f-rmst or t-cox and write the coefficient table and model file
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        tau: Option<f64>,
        #[command(flatten)]
        rmst: RmstArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Predict RMST for a covariate profile from a fitted model file
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// covariate value, repeatable: --set enrollment=1
        #[arg(long = "set", value_parser = parse_assignment)]
        set: Vec<(String, f64)>,
    },
    /// Run a Monte Carlo study from a key = value config
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "coefficients")]
        study: Study,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Repeated train/test evaluation of several models
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "t-cox,t-rmst,f-rmst")]
        models: Vec<ModelKind>,
        #[arg(long, default_value_t = 2.0 / 3.0)]
        fraction: f64,
        #[arg(long, default_value_t = 500)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        tau: f64,
        #[command(flatten)]
        rmst: RmstArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    Ok((k.trim().to_string(), v.trim().parse().map_err(|_| format!("cannot parse `{v}`"))?))
}

fn run(cmd: Command) -> Result<(), CliError> {
    let pool = cli::thread_pool()?;
    match cmd {
        Command::Fit { data, model, tau, rmst, out } => {
            let r = cli::cmd_fit(&FitRequest {
                data: data.into(),
                model,
                tau,
                link: rmst.link,
                grid_policy: rmst.grid_policy,
                weight_scheme: rmst.weights,
                max_weight: rmst.max_weight,
                ties: rmst.ties,
                out,
            })?;
            print!("{}", r.table);
            println!("r2 = {:.3}", r.r2);
        }
        Command::Predict { model, set } => {
            println!("{}", cli::format_prediction(&cli::cmd_predict(&model, &set)?));
        }
        Command::Simulate { config, study, seed, out } => {
            for f in pool.install(|| cli::cmd_simulate(&config, study, seed, &out))? {
                println!("{}", f.display());
            }
        }
        Command::Evaluate { data, models, fraction, repeats, seed, tau, rmst, out } => {
            let req = EvaluateRequest {
                data: data.into(),
                models,
                fraction,
                repeats,
                seed,
                tau,
                link: rmst.link,
                grid_policy: rmst.grid_policy,
                weight_scheme: rmst.weights,
                max_weight: rmst.max_weight,
                ties: rmst.ties,
                out,
            };
            let (summary, _) = pool.install(|| cli::cmd_evaluate(&req))?;
            for r in &summary.rows {
                let pe = r.prediction_error.map_or("-".to_string(), |v| format!("{v:.3}"));
                println!("{:7} C = {:.3}  PE = {pe}", r.model.to_string(), r.c_index);
            }
            println!("repeats used: {} (failed: {})", summary.repeats_used, summary.failed_repeats);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
