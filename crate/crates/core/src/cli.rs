//! Command-line front end.
//!
//! Every subcommand reads one JSON config (missing keys take the defaults of
//! [`ExperimentConfig`]), honours `--seed`, writes its artifacts below
//! `--out` and echoes the effective config as `config.resolved.json`.
//! Exit status is 0 on success, 1 on numerical failures (filter divergence,
//! embedding failure) and 2 on usage or configuration errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dynamics::{observe, simulate, ObservationModel, TimeSeries};
use crate::embedding::{build_delay_vectors, estimate_embedding};
use crate::enkf::{run_rafda_from, FilterConfig};
use crate::evaluation::{attractor_stats, forecast_time, AttractorStats, ForecastScore};
use crate::experiments::{realization_data, resolve_embedding, run_noise_sweep_in, run_study_in, ExperimentConfig};
use crate::features::{free_run, sample_feature_params, EmbeddingMeta, SurrogateModel};
use crate::io::{create_file, fmt_f64, write_json};
use crate::regression::{build_training_matrices, ridge_regression};
use crate::seeds::{stream_rng, Stream};
use crate::{RafdaError, Result};

#[derive(Debug, Parser)]
#[command(name = "rafda", version, about = "Random feature surrogates trained by ensemble Kalman filtering")]
pub struct Cli {
    /// JSON config; absent keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate Lorenz-63 and write training observations and validation truth.
    Simulate(SimulateArgs),
    /// Choose delay and embedding dimension for a series.
    Embed(InputArgs),
    /// Fit output weights by ridge regression.
    TrainLr(InputArgs),
    /// Fit output weights with the ensemble Kalman filter.
    TrainRafda(InputArgs),
    /// Free-run a model from the first delay vector of a series.
    Forecast(ModelArgs),
    /// Forecast time and long-run statistics of a model against a series.
    Evaluate(EvaluateArgs),
    /// Forecast-time statistics over many realizations.
    Study,
    /// Forecast-time statistics over a grid of noise variances.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Realization whose random streams are used.
    #[arg(long, default_value_t = 0)]
    pub realization: u64,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV with a time column followed by value columns.
    #[arg(long, value_name = "CSV")]
    pub input: PathBuf,
    /// Value column to use (0 is the first after time).
    #[arg(long, default_value_t = 0)]
    pub column: usize,
    /// Realization whose feature and filter streams are used.
    #[arg(long, default_value_t = 0)]
    pub realization: u64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_name = "JSON")]
    pub model: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub column: usize,
    /// Steps to forecast; defaults to the validation horizon.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Length of the free run compared with the series, in Lyapunov times.
    #[arg(long, default_value_t = 25.0)]
    pub lyapunov_times: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated, strictly increasing noise variances.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-4, 1e-2, 0.2, 1.0, 100.0])]
    pub etas: Vec<f64>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Embed(_) => "embed",
            Command::TrainLr(_) => "train-lr",
            Command::TrainRafda(_) => "train-rafda",
            Command::Forecast(_) => "forecast",
            Command::Evaluate(_) => "evaluate",
            Command::Study => "study",
            Command::Sweep(_) => "sweep",
        }
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &RafdaError) -> i32 {
    if e.is_usage() {
        2
    } else {
        1
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
}

/// Config file (or defaults) with the seed override applied.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("results").join(cli.command.name()));
    cfg.save(&out.join("config.resolved.json"))?;
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(&cfg, a, &out),
        Command::Embed(a) => embed_cmd(a, &out),
        Command::TrainLr(a) => train_cmd(&cfg, a, &out, false),
        Command::TrainRafda(a) => train_cmd(&cfg, a, &out, true),
        Command::Forecast(a) => forecast_cmd(&cfg, a, &out),
        Command::Evaluate(a) => evaluate_cmd(&cfg, a, &out),
        Command::Study => {
            let outcome = run_study_in(&cfg, &out)?;
            print_json(&outcome.summary)
        }
        Command::Sweep(a) => {
            let sweep = run_noise_sweep_in(&cfg, &a.etas, &out)?;
            print_json(&sweep.points)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn simulate_cmd(cfg: &ExperimentConfig, a: &SimulateArgs, out: &Path) -> Result<()> {
    let data = realization_data(cfg, a.realization)?;
    data.truth_train.write_csv(&out.join("truth_train.csv"))?;
    data.train.write_csv(&out.join("observations.csv"), Some(&["x"]))?;
    let len = cfg.n_train + 1 + cfg.validation_steps() + 20_000;
    let validation = simulate(&data.validation_start, cfg.dt, 0.0, cfg.substeps, len)?;
    validation.write_csv(&out.join("validation.csv"))?;
    // a noisy copy of the validation run for embedding or training experiments
    let noisy = observe(&validation, &ObservationModel::lorenz_x(cfg.eta)?, &mut stream_rng(cfg.seed, a.realization, Stream::Validation))?;
    noisy.write_csv(&out.join("validation_observations.csv"), Some(&["x"]))
}

fn scalar_input(path: &Path, column: usize) -> Result<TimeSeries> {
    let series = TimeSeries::read_csv(path)?;
    if column >= series.dim() {
        return Err(RafdaError::InvalidArgument(format!(
            "{} has {} value columns, column {column} requested",
            path.display(),
            series.dim()
        )));
    }
    Ok(TimeSeries::scalar(series.component(column), series.dt()))
}

fn embed_cmd(a: &InputArgs, out: &Path) -> Result<()> {
    let series = scalar_input(&a.input, a.column)?;
    let report = estimate_embedding(series.as_slice(), &ExperimentConfig::default().search())?;
    write_json(&out.join("embedding.json"), &report)?;
    print_json(&serde_json::json!({ "m": report.chosen_m, "tau": report.chosen_tau }))
}

fn train_cmd(cfg: &ExperimentConfig, a: &InputArgs, out: &Path, filter: bool) -> Result<()> {
    let series = scalar_input(&a.input, a.column)?;
    let (m, tau) = resolve_embedding(cfg, series.as_slice())?;
    let needed = cfg.n_train + 1 + (m - 1) * tau;
    let series = if series.len() > needed {
        series.truncated(needed)
    } else {
        series
    };
    let delays = build_delay_vectors(&series, m, tau)?;
    let params = sample_feature_params(
        cfg.feature_dim,
        m,
        cfg.w,
        cfg.b,
        &mut stream_rng(cfg.seed, a.realization, Stream::Features),
    )?;
    let w_lr = ridge_regression(&build_training_matrices(&delays, &params)?, cfg.beta)?;
    let embedding = EmbeddingMeta {
        m,
        tau,
        dt: series.dt(),
        d: 1,
    };
    if !filter {
        let model = SurrogateModel::new(params, w_lr, embedding)?;
        model.save(&out.join("model_lr.json"))?;
        return print_json(&serde_json::json!({ "m": m, "tau": tau, "pairs": delays.len() - 1 }));
    }
    let fc = FilterConfig::isotropic(m, cfg.eta, cfg.alpha, cfg.gamma, cfg.members)?;
    let mut rng = stream_rng(cfg.seed, a.realization, Stream::Filter);
    match run_rafda_from(&delays, &params, &fc, &w_lr, &mut rng) {
        Ok(run) => {
            run.diagnostics.write_csv(&out.join("filter_diagnostics.csv"))?;
            SurrogateModel::new(params, run.weights, embedding)?.save(&out.join("model_rafda.json"))?;
            print_json(&serde_json::json!({ "m": m, "tau": tau, "steps": run.diagnostics.records.len() }))
        }
        Err(RafdaError::FilterDiverged(d)) => {
            d.diagnostics.write_csv(&out.join("filter_diagnostics.csv"))?;
            Err(RafdaError::FilterDiverged(d))
        }
        Err(e) => Err(e),
    }
}

/// Delay vectors of the input series in the model's embedding.
fn model_input(a: &ModelArgs) -> Result<(SurrogateModel, Vec<nalgebra::DVector<f64>>)> {
    let model = SurrogateModel::load(&a.model)?;
    let series = scalar_input(&a.input, a.column)?;
    let delays = build_delay_vectors(&series, model.embedding.m, model.embedding.tau)?;
    Ok((model, delays.to_vecs()))
}

fn forecast_cmd(cfg: &ExperimentConfig, a: &ModelArgs, out: &Path) -> Result<()> {
    let (model, truth) = model_input(a)?;
    let steps = a.steps.unwrap_or_else(|| cfg.validation_steps()).min(truth.len() - 1);
    let run = free_run(&model.weights, &model.params, &truth[0], steps)?;
    let truth = &truth[..=steps];
    let score = forecast_time(&run.states, truth, cfg.theta, model.embedding.dt, cfg.lyapunov_max)?;

    let path = out.join("forecast.csv");
    let mut w = csv::Writer::from_writer(create_file(&path)?);
    w.write_record(["t", "lyapunov_time", "truth", "forecast"])?;
    for (n, v) in truth.iter().enumerate() {
        let t = n as f64 * model.embedding.dt;
        let s = run.states.get(n).map_or(f64::NAN, |s| s[0]);
        w.write_record([fmt_f64(t), fmt_f64(t * cfg.lyapunov_max), fmt_f64(v[0]), fmt_f64(s)])?;
    }
    w.flush().map_err(|e| RafdaError::io(&path, e))?;
    write_json(&out.join("score.json"), &score)?;
    print_json(&score)
}

#[derive(Serialize)]
struct Evaluation {
    forecast: ForecastScore,
    attractor: AttractorStats,
    consistent: bool,
}

fn evaluate_cmd(cfg: &ExperimentConfig, a: &EvaluateArgs, out: &Path) -> Result<()> {
    let (model, truth) = model_input(&a.model)?;
    let horizon = a.model.steps.unwrap_or_else(|| cfg.validation_steps()).min(truth.len() - 1);
    let dt = model.embedding.dt;
    let short = free_run(&model.weights, &model.params, &truth[0], horizon)?;
    let forecast = forecast_time(&short.states, &truth[..=horizon], cfg.theta, dt, cfg.lyapunov_max)?;
    let steps = (a.lyapunov_times / (cfg.lyapunov_max * dt)).ceil() as usize;
    let long = free_run(&model.weights, &model.params, &truth[0], steps)?;
    let attractor = attractor_stats(&long, &truth)?;
    let eval = Evaluation {
        forecast,
        consistent: attractor.is_consistent(0.99, 0.25),
        attractor,
    };
    write_json(&out.join("evaluation.json"), &eval)?;
    print_json(&eval)
}
